//! Training loop, evaluation, multi-trial runs and test-time augmentation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{apply_all, AugmentConfig, AugmentedBundle};
use crate::checkpoint::{self, CheckpointMeta};
use crate::error::{Error, Result};
use crate::loss::{consistency_per_sample, LossBreakdown};
use crate::model::{argmax, ArchConfig, Batch, GatedModel, Variant};
use crate::nn::{softmax_rows, Mode, Parameterized};
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngStream;
use crate::series::{Dataset, TimeSeries};

/// Number of trials averaged in a reported result.
pub const DEFAULT_TRIALS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Weight of the consistency loss; ignored for [`Variant::NoAug`].
    pub lambda: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
    pub augment_cfg: AugmentConfig,
    pub arch_cfg: ArchConfig,
}

impl TrainConfig {
    /// Standard architecture for `data`, 10,000 iterations of batch 64.
    pub fn for_dataset(data: &Dataset, variant: Variant, lambda: f64) -> Self {
        let (c, t) = data.shape();
        Self {
            variant,
            lambda,
            iterations: 10_000,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            seed: 0,
            augment_cfg: AugmentConfig::default(),
            arch_cfg: ArchConfig::standard(c, t, data.n_classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.batch_size < 1 {
            return Err(Error::Config(
                "iterations and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        self.augment_cfg.validate()?;
        self.arch_cfg.validate()
    }

    /// Consistency weight actually applied.
    pub fn effective_lambda(&self) -> f64 {
        match self.variant {
            Variant::NoAug => 0.0,
            _ => self.lambda,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            ..AdamConfig::default()
        }
    }

    pub fn checkpoint_meta(&self, model: &GatedModel, iterations: usize) -> CheckpointMeta {
        CheckpointMeta {
            iterations,
            ..CheckpointMeta::for_model(
                model,
                self.augment_cfg.clone(),
                self.effective_lambda(),
                self.seed,
            )
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,ce,con,total,lambda\n");
        for r in &self.rows {
            let l = r.loss;
            writeln!(
                out,
                "{},{:e},{:e},{:e},{}",
                r.iteration, l.ce, l.con, l.total, l.lambda
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss.total).collect()
    }

    pub fn last(&self) -> Option<LossBreakdown> {
        self.rows.last().map(|r| r.loss)
    }
}

/// Step-by-step training state. [`train`] drives it to completion.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: &'a [TimeSeries],
    model: GatedModel,
    opt: Adam,
    shuffle_rng: RngStream,
    augment_rng: RngStream,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
    log: TrainLog,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let (c, t) = data.shape();
        let arch = &cfg.arch_cfg;
        if (c, t) != (arch.input_channels, arch.input_length) || data.n_classes != arch.n_classes {
            return Err(Error::shape(
                format!(
                    "[{} x {}], {} classes",
                    arch.input_channels, arch.input_length, arch.n_classes
                ),
                format!("[{c} x {t}], {} classes", data.n_classes),
            ));
        }
        let model = GatedModel::new(
            arch.clone(),
            cfg.variant,
            &mut RngStream::substream(cfg.seed, 0),
        )?;
        let opt = Adam::new(cfg.adam(), &model);
        Ok(Self {
            shuffle_rng: RngStream::substream(cfg.seed, 1),
            augment_rng: RngStream::substream(cfg.seed, 2),
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
            log: TrainLog::default(),
            train: &data.train,
            model,
            opt,
            cfg,
        })
    }

    pub fn model(&self) -> &GatedModel {
        &self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Next minibatch indices, reshuffling at every epoch boundary.
    fn next_indices(&mut self) -> Vec<usize> {
        let n = self.train.len();
        let b = self.cfg.batch_size.min(n);
        let mut idx = Vec::with_capacity(b);
        while idx.len() < b {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.shuffle_rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            idx.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        idx
    }

    /// Augment, forward, backward and one Adam update.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let idx = self.next_indices();
        let mut bundles = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in &idx {
            let x = &self.train[i];
            bundles.push(self.model.bundle_for(
                x,
                &self.cfg.augment_cfg,
                &mut self.augment_rng,
                true,
            )?);
            labels.push(x.label());
        }
        let batch = Batch::from_bundles(&bundles, self.model.n_views())?;
        self.iteration += 1;
        self.model.zero_grad();
        let loss = self
            .model
            .accumulate_gradients(&batch, &labels, self.cfg.effective_lambda())?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                loss: loss.total,
            });
        }
        self.opt.step(&mut self.model);
        self.log.rows.push(LogRow {
            iteration: self.iteration,
            loss,
        });
        Ok(loss)
    }

    pub fn finish(self) -> (GatedModel, TrainLog) {
        (self.model, self.log)
    }
}

/// Trains a fresh model for `cfg.iterations` steps.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<(GatedModel, TrainLog)> {
    train_observed(cfg, data, &mut |_, _| {})
}

/// [`train`], calling `on_step(iteration, loss)` after every update.
pub fn train_observed(
    cfg: &TrainConfig,
    data: &Dataset,
    on_step: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<(GatedModel, TrainLog)> {
    let mut t = Trainer::new(cfg.clone(), data)?;
    for _ in 0..cfg.iterations {
        let loss = t.step()?;
        on_step(t.iteration(), &loss);
    }
    Ok(t.finish())
}

/// Eval-mode logits for each series, every expert seeing the raw input.
pub fn predict_logits(model: &GatedModel, split: &[TimeSeries]) -> Result<Array2<f64>> {
    let bundles: Vec<AugmentedBundle> = split
        .iter()
        .map(|x| AugmentedBundle::identity(x, model.n_views()))
        .collect();
    model.predict_logits(&bundles)
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy_from_logits(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::shape(
            format!("{} rows", labels.len()),
            logits.nrows(),
        ));
    }
    let hits = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn evaluate(model: &GatedModel, split: &[TimeSeries]) -> Result<f64> {
    evaluate_with(model, split, &EvalInput::Identity)
}

/// What the experts and gate see at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalInput {
    /// The raw input replicated to every view.
    Identity,
    /// A stochastic bundle per sample, drawn from substream `i` of `seed`.
    Augmented { cfg: AugmentConfig, seed: u64 },
}

pub fn evaluate_with(model: &GatedModel, split: &[TimeSeries], input: &EvalInput) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let labels: Vec<usize> = split.iter().map(|x| x.label()).collect();
    let logits = match input {
        EvalInput::Identity => predict_logits(model, split)?,
        EvalInput::Augmented { cfg, seed } => {
            let bundles = split
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    model.bundle_for(x, cfg, &mut RngStream::substream(*seed, i as u64), true)
                })
                .collect::<Result<Vec<_>>>()?;
            model.predict_logits(&bundles)?
        }
    };
    accuracy_from_logits(&logits, &labels)
}

/// Mean per-sample consistency loss in eval mode, each sample seeing a
/// fixed-seed augmented bundle (substream `i` of `seed`).
pub fn eval_consistency(
    model: &GatedModel,
    split: &[TimeSeries],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    if model.n_views() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (start, chunk) in (0..split.len()).step_by(128).zip(split.chunks(128)) {
        let bundles = chunk
            .iter()
            .enumerate()
            .map(|(j, x)| apply_all(x, cfg, &mut RngStream::substream(seed, (start + j) as u64)))
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch::from_bundles(&bundles, model.n_views())?;
        let (out, _) = model.forward_batch(&batch, Mode::Eval)?;
        total += consistency_per_sample(&out.features)?.iter().sum::<f64>();
    }
    Ok(total / split.len() as f64)
}

/// Elementwise mean of probability vectors.
pub fn average_probabilities(probs: &[Array1<f64>]) -> Result<Array1<f64>> {
    let first = probs.first().ok_or(Error::Empty("probability vectors"))?;
    let mut sum = Array1::zeros(first.len());
    for p in probs {
        if p.len() != first.len() {
            return Err(Error::shape(first.len(), p.len()));
        }
        sum += p;
    }
    Ok(sum / probs.len() as f64)
}

/// Softmax-averaged prediction over all augmented views of `x` (identity
/// included), each fed to a single-expert model.
pub fn tta_predict(
    model: &GatedModel,
    x: &TimeSeries,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<usize> {
    Ok(argmax(tta_probabilities(model, x, cfg, rng)?.view()))
}

pub fn tta_probabilities(
    model: &GatedModel,
    x: &TimeSeries,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<Array1<f64>> {
    let views = apply_all(x, cfg, rng)?;
    let bundles: Vec<AugmentedBundle> = views
        .views
        .into_iter()
        .map(|v| {
            Ok(AugmentedBundle::identity(
                &TimeSeries::new(v, x.label())?,
                model.n_views(),
            ))
        })
        .collect::<Result<_>>()?;
    let probs = softmax_rows(&model.predict_logits(&bundles)?);
    let rows: Vec<Array1<f64>> = probs.rows().into_iter().map(|r| r.to_owned()).collect();
    average_probabilities(&rows)
}

/// TTA accuracy; sample `i` draws its views from substream `i` of `seed`.
pub fn tta_evaluate(
    model: &GatedModel,
    split: &[TimeSeries],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut hits = 0usize;
    for (i, x) in split.iter().enumerate() {
        if tta_predict(model, x, cfg, &mut RngStream::substream(seed, i as u64))? == x.label() {
            hits += 1;
        }
    }
    Ok(hits as f64 / split.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub per_trial_accuracy: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub final_losses: Vec<LossBreakdown>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrialReport {
    pub fn from_accuracies(acc: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&acc);
        Self {
            per_trial_accuracy: acc,
            mean,
            std,
            final_losses: Vec::new(),
            checkpoints: Vec::new(),
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `n_trials` independent runs with seeds `seed + k`, scored on the test
/// split. With `out`, trial `k` writes `trial_k/model.ckpt` and
/// `trial_k/train_log.csv` there.
pub fn run_trials(
    cfg: &TrainConfig,
    data: &Dataset,
    n_trials: usize,
    out: Option<&Path>,
) -> Result<TrialReport> {
    let seeds: Vec<u64> = (0..n_trials as u64).map(|k| cfg.seed + k).collect();
    run_trials_with_seeds(cfg, data, &seeds, out)
}

pub fn run_trials_with_seeds(
    cfg: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<TrialReport> {
    run_trials_observed(cfg, data, seeds, out, &mut |_, _, _| {})
}

/// `on_step(trial, iteration, loss)` is called after every update.
pub fn run_trials_observed(
    cfg: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    out: Option<&Path>,
    on_step: &mut dyn FnMut(usize, usize, &LossBreakdown),
) -> Result<TrialReport> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one trial".into()));
    }
    let mut acc = Vec::with_capacity(seeds.len());
    let mut final_losses = Vec::new();
    let mut checkpoints = Vec::new();
    for (k, &seed) in seeds.iter().enumerate() {
        let trial_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let (model, log) = train_observed(&trial_cfg, data, &mut |i, l| on_step(k, i, l))?;
        acc.push(evaluate(&model, &data.test)?);
        final_losses.extend(log.last());
        if let Some(dir) = out {
            let dir = dir.join(format!("trial_{k}"));
            let path = dir.join("model.ckpt");
            let mut meta = trial_cfg.checkpoint_meta(&model, trial_cfg.iterations);
            meta.dataset = Some(data.name.clone());
            checkpoint::save(&path, &model, &meta)?;
            log.write_csv(&dir.join("train_log.csv"))?;
            checkpoints.push(path);
        }
    }
    Ok(TrialReport {
        final_losses,
        checkpoints,
        ..TrialReport::from_accuracies(acc)
    })
}

pub const RESULTS_HEADER: &str = "dataset,variant,lambda,mean,std,per_trial";

/// One results row; per-trial accuracies are `;`-separated.
pub fn results_row(dataset: &str, variant: Variant, lambda: f64, report: &TrialReport) -> String {
    let per: Vec<String> = report
        .per_trial_accuracy
        .iter()
        .map(|a| format!("{a}"))
        .collect();
    format!(
        "{dataset},{variant},{lambda},{},{},{}",
        report.mean,
        report.std,
        per.join(";")
    )
}

/// Appends a row to `path`, writing the header first if the file is new.
pub fn append_result(path: &Path, row: &str) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(f, "{RESULTS_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(f, "{row}").map_err(|e| Error::io(path, e))
}
