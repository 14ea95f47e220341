#![allow(dead_code)]

use dynaug::augment::{apply_all, AugmentConfig, AugmentedBundle};
use dynaug::model::{ArchConfig, Batch, GatedModel, Variant};
use dynaug::nn::{Mode, Parameterized};
use dynaug::rng::RngStream;
use dynaug::series::TimeSeries;

/// Tiny architecture used for gradient checks: T = 16, filters (2, 3, 4),
/// dense width 8.
pub fn tiny_arch(n_classes: usize) -> ArchConfig {
    ArchConfig::standard(1, 16, n_classes).with_widths(&[2, 3, 4], 8)
}

pub fn random_series(len: usize, label: usize, rng: &mut RngStream) -> TimeSeries {
    TimeSeries::univariate((0..len).map(|_| rng.normal(0.0, 0.6)).collect(), label).unwrap()
}

pub fn random_batch(
    n: usize,
    len: usize,
    n_classes: usize,
    seed: u64,
) -> (Vec<AugmentedBundle>, Vec<usize>) {
    let mut rng = RngStream::new(seed);
    let cfg = AugmentConfig::default();
    let mut bundles = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let x = random_series(len, i % n_classes, &mut rng);
        bundles.push(apply_all(&x, &cfg, &mut rng).unwrap());
        labels.push(i % n_classes);
    }
    (bundles, labels)
}

pub struct GradCheck {
    pub checked: usize,
    /// Samples redrawn because `theta +- h` crossed a ReLU or max-pool kink.
    pub straddled: usize,
    pub max_rel_err: f64,
    pub worst: String,
    /// `(tensor, entry, rel_err)` for every checked entry.
    pub entries: Vec<(usize, usize, f64)>,
}

/// Tiny model, one training batch and the analytic gradient of its total loss.
pub struct GradProblem {
    pub model: GatedModel,
    pub batch: Batch,
    pub labels: Vec<usize>,
    pub lambda: f64,
    pub grads: Vec<Vec<f64>>,
    pub loss: f64,
}

pub const GRAD_BATCH: usize = 8;

impl GradProblem {
    pub fn new(variant: Variant, lambda: f64, seed: u64) -> Self {
        let arch = tiny_arch(3);
        let model = GatedModel::new(arch.clone(), variant, &mut RngStream::new(seed)).unwrap();
        let (bundles, labels) = random_batch(GRAD_BATCH, arch.input_length, 3, seed + 100);
        let batch = Batch::from_bundles(&bundles, model.n_views()).unwrap();
        let mut scratch = model.clone();
        scratch.zero_grad();
        let loss = scratch
            .accumulate_gradients(&batch, &labels, lambda)
            .unwrap()
            .total;
        let grads = scratch
            .params()
            .iter()
            .map(|p| p.grad.iter().copied().collect())
            .collect();
        Self {
            model,
            batch,
            labels,
            lambda,
            grads,
            loss,
        }
    }

    /// Central difference for one entry, or `None` when `theta +- h` lands in
    /// a different activation region than `theta`.
    pub fn central_difference(&mut self, tensor: usize, idx: usize, h: f64) -> Option<f64> {
        let orig = self.model.params()[tensor].value.as_slice().unwrap()[idx];
        let mut eval = |v: f64| {
            self.model.params_mut()[tensor]
                .value
                .as_slice_mut()
                .unwrap()[idx] = v;
            let (l, sig) = self
                .model
                .loss_with_signature(&self.batch, &self.labels, self.lambda, Mode::Train)
                .unwrap();
            (l.total, sig)
        };
        let (lp, sp) = eval(orig + h);
        let (lm, sm) = eval(orig - h);
        let (_, s0) = eval(orig);
        (sp == s0 && sm == s0).then(|| (lp - lm) / (2.0 * h))
    }

    /// `|a - fd| / max(|a|, |fd|, floor)` with `floor = 1e-7 * max(1, loss)`.
    /// The floor sits above the round-off level of the difference quotient
    /// for gradients that are exactly zero (conv biases feeding batch norm).
    pub fn rel_err(&self, tensor: usize, idx: usize, fd: f64) -> f64 {
        let an = self.grads[tensor][idx];
        let floor = 1e-7 * self.loss.abs().max(1.0);
        (an - fd).abs() / an.abs().max(fd.abs()).max(floor)
    }
}

/// Compares analytic gradients of the training-mode total loss with central
/// differences on `samples_per_param` entries of every parameter tensor.
///
/// The loss is piecewise smooth. An entry whose `theta - h`, `theta` and
/// `theta + h` evaluations land in different activation regions has no valid
/// central difference and is redrawn (up to a bounded number of times).
pub fn gradient_check(
    variant: Variant,
    lambda: f64,
    seed: u64,
    samples_per_param: usize,
    h: f64,
) -> (GradProblem, GradCheck) {
    let mut problem = GradProblem::new(variant, lambda, seed);
    let mut pick = RngStream::new(seed + 7);
    let mut report = GradCheck {
        checked: 0,
        straddled: 0,
        max_rel_err: 0.0,
        worst: String::new(),
        entries: Vec::new(),
    };
    for pi in 0..problem.grads.len() {
        let len = problem.grads[pi].len();
        let mut taken = 0;
        let mut attempts = 0;
        while taken < samples_per_param.min(len) && attempts < 20 * samples_per_param {
            attempts += 1;
            let idx = pick.int_inclusive(0, len - 1);
            let Some(fd) = problem.central_difference(pi, idx, h) else {
                report.straddled += 1;
                continue;
            };
            taken += 1;
            let rel = problem.rel_err(pi, idx, fd);
            report.checked += 1;
            report.entries.push((pi, idx, rel));
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                let an = problem.grads[pi][idx];
                report.worst =
                    format!("param tensor {pi} entry {idx}: analytic {an:e} vs fd {fd:e}");
            }
        }
    }
    (problem, report)
}
