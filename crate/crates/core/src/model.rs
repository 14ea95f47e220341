//! Expert networks, the gating network, gated feature fusion and the
//! classifier head.
//!
//! Each expert is a temporal CNN (conv/BN/ReLU/pool blocks, then two dense
//! layers) fed one augmented view. The gate runs the same trunk shape over
//! all views stacked along the channel axis and emits softmax weights over
//! experts. The fused feature `sum_n alpha_n f_n` goes to a two-layer
//! classifier.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{apply_all, AugmentConfig, AugmentedBundle};
use crate::error::{Error, Result};
use crate::loss::{consistency_batch, cross_entropy_batch, LossBreakdown};
use crate::nn::{
    softmax_rows, softmax_rows_backward, Mlp, MlpCache, Mode, Param, Parameterized, Tower,
    TowerCache, Trunk,
};
use crate::rng::RngStream;
use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub n_experts: usize,
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub fc_width: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub input_channels: usize,
    pub input_length: usize,
}

impl ArchConfig {
    /// Five experts, filters (32, 64, 128), kernel 5, pool 2, 512-wide dense
    /// layers.
    pub fn standard(input_channels: usize, input_length: usize, n_classes: usize) -> Self {
        Self {
            n_experts: 5,
            conv_filters: vec![32, 64, 128],
            kernel_size: 5,
            pool_size: 2,
            fc_width: 512,
            feature_dim: 512,
            n_classes,
            input_channels,
            input_length,
        }
    }

    /// Same topology with every width replaced.
    pub fn with_widths(mut self, filters: &[usize], fc: usize) -> Self {
        self.conv_filters = filters.to_vec();
        self.fc_width = fc;
        self.feature_dim = fc;
        self
    }

    pub fn pooled_length(&self) -> usize {
        self.conv_filters
            .iter()
            .fold(self.input_length, |l, _| l / self.pool_size.max(1))
    }

    /// Width of the flattened trunk output.
    pub fn flat_width(&self) -> usize {
        self.pooled_length() * self.conv_filters.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_experts < 2 {
            return bad(format!("need at least 2 experts, got {}", self.n_experts));
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return bad("conv_filters must be nonempty and positive".into());
        }
        if self.kernel_size == 0 || self.pool_size == 0 {
            return bad("kernel and pool sizes must be positive".into());
        }
        if self.fc_width == 0 || self.feature_dim != self.fc_width {
            return bad(format!(
                "feature_dim ({}) must equal fc_width ({})",
                self.feature_dim, self.fc_width
            ));
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.input_channels == 0 || self.input_length < 2 {
            return bad("input must have C >= 1 and T >= 2".into());
        }
        if self.pooled_length() < 1 {
            return bad(format!(
                "input length {} is too short for {} pooling stages",
                self.input_length,
                self.conv_filters.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Gated fusion of all experts.
    Proposed,
    /// A single expert on the unaugmented input.
    NoAug,
    /// Expert features concatenated, no gate.
    Concat,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::NoAug => "no_aug",
            Variant::Concat => "concat",
        }
    }

    pub fn uses_augmentation(self) -> bool {
        !matches!(self, Variant::NoAug)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "proposed" | "gated" => Ok(Variant::Proposed),
            "no_aug" | "noaug" => Ok(Variant::NoAug),
            "concat" => Ok(Variant::Concat),
            _ => Err(Error::Config(format!("unknown variant '{s}'"))),
        }
    }
}

/// Per-sample result of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Array1<f64>,
    /// Gating weights; `None` for variants without a gate.
    pub alphas: Option<Array1<f64>>,
    pub features: Vec<Array1<f64>>,
    pub fused: Array1<f64>,
}

/// Batched views ready for the networks.
#[derive(Debug, Clone)]
pub struct Batch {
    /// One `[B * T, C]` matrix per view.
    pub views: Vec<Array2<f64>>,
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
}

impl Batch {
    /// Packs the first `n_views` views of every bundle.
    pub fn from_bundles(bundles: &[AugmentedBundle], n_views: usize) -> Result<Self> {
        let first = bundles.first().ok_or(Error::Empty("batch"))?;
        let (c, t) = first.shape();
        for b in bundles {
            if b.len() < n_views {
                return Err(Error::shape(format!("{n_views} views"), b.len()));
            }
            if let Some(v) = b.views.iter().find(|v| v.dim() != (c, t)) {
                return Err(Error::shape(
                    format!("[{c} x {t}]"),
                    format!("{:?}", v.dim()),
                ));
            }
        }
        let views = (0..n_views)
            .map(|n| pack_channels_last(bundles.iter().map(|b| &b.views[n]), c, t))
            .collect();
        Ok(Self {
            views,
            batch: bundles.len(),
            len: t,
            channels: c,
        })
    }

    /// Every view stacked along channels: `[B * T, N * C]`, column `n * C + c`.
    pub fn stacked(&self) -> Array2<f64> {
        let n = self.views.len();
        let c = self.channels;
        let mut out = Array2::zeros((self.batch * self.len, n * c));
        for (i, v) in self.views.iter().enumerate() {
            out.slice_mut(s![.., i * c..(i + 1) * c]).assign(v);
        }
        out
    }
}

fn pack_channels_last<'a>(
    views: impl Iterator<Item = &'a Array2<f64>>,
    c: usize,
    t: usize,
) -> Array2<f64> {
    let mut data = Vec::new();
    for v in views {
        for j in 0..t {
            for i in 0..c {
                data.push(v[[i, j]]);
            }
        }
    }
    let rows = data.len() / c;
    Array2::from_shape_vec((rows, c), data).expect("packed shape")
}

/// Batched forward results.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub logits: Array2<f64>,
    pub alphas: Option<Array2<f64>>,
    pub features: Vec<Array2<f64>>,
    pub fused: Array2<f64>,
}

impl BatchOutput {
    /// Splits out sample `i`.
    pub fn sample(&self, i: usize) -> ForwardOutput {
        ForwardOutput {
            logits: self.logits.row(i).to_owned(),
            alphas: self.alphas.as_ref().map(|a| a.row(i).to_owned()),
            features: self.features.iter().map(|f| f.row(i).to_owned()).collect(),
            fused: self.fused.row(i).to_owned(),
        }
    }
}

/// Intermediate values needed by [`GatedModel::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    mode: Mode,
    experts: Vec<TowerCache>,
    gate: Option<TowerCache>,
    classifier: MlpCache,
}

impl Tape {
    /// Hash of the piecewise-linear region the forward pass landed in: ReLU
    /// activity and max-pool winners. Two inputs with equal signatures lie
    /// in the same smooth piece of the loss.
    pub fn activation_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for e in &self.experts {
            e.hash_pattern(&mut h);
        }
        if let Some(g) = &self.gate {
            g.hash_pattern(&mut h);
        }
        self.classifier.hash_pattern(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedModel {
    pub arch: ArchConfig,
    pub variant: Variant,
    pub experts: Vec<Tower>,
    pub gate: Option<Tower>,
    pub classifier: Mlp,
}

/// Proposed-variant model with freshly initialized weights.
pub fn init_model(cfg: &ArchConfig, rng: &mut RngStream) -> Result<GatedModel> {
    GatedModel::new(cfg.clone(), Variant::Proposed, rng)
}

impl GatedModel {
    pub fn new(arch: ArchConfig, variant: Variant, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let n_experts = match variant {
            Variant::NoAug => 1,
            _ => arch.n_experts,
        };
        let flat = arch.flat_width();
        let tower = |in_channels: usize, head: &[usize], rng: &mut RngStream| Tower {
            trunk: Trunk::new(
                in_channels,
                &arch.conv_filters,
                arch.kernel_size,
                arch.pool_size,
                rng,
            ),
            head: Mlp::new(head, rng),
        };
        let experts = (0..n_experts)
            .map(|_| {
                tower(
                    arch.input_channels,
                    &[flat, arch.fc_width, arch.feature_dim],
                    rng,
                )
            })
            .collect();
        let gate = (variant == Variant::Proposed).then(|| {
            tower(
                arch.n_experts * arch.input_channels,
                &[flat, arch.fc_width, arch.fc_width, arch.n_experts],
                rng,
            )
        });
        let cls_in = match variant {
            Variant::Concat => arch.n_experts * arch.feature_dim,
            _ => arch.feature_dim,
        };
        let classifier = Mlp::new(&[cls_in, arch.fc_width, arch.n_classes], rng);
        Ok(Self {
            arch,
            variant,
            experts,
            gate,
            classifier,
        })
    }

    /// Number of input views the model consumes.
    pub fn n_views(&self) -> usize {
        self.experts.len()
    }

    pub fn classifier_input_width(&self) -> usize {
        self.classifier.inputs()
    }

    fn check_input(&self, c: usize, t: usize) -> Result<()> {
        if (c, t) != (self.arch.input_channels, self.arch.input_length) {
            return Err(Error::shape(
                format!(
                    "[{} x {}]",
                    self.arch.input_channels, self.arch.input_length
                ),
                format!("[{c} x {t}]"),
            ));
        }
        Ok(())
    }

    /// Bundle the model sees for `x`: all five views in training, the input
    /// replicated otherwise. The no-augmentation variant never augments.
    pub fn bundle_for(
        &self,
        x: &TimeSeries,
        cfg: &AugmentConfig,
        rng: &mut RngStream,
        augmented: bool,
    ) -> Result<AugmentedBundle> {
        if augmented && self.variant.uses_augmentation() {
            apply_all(x, cfg, rng)
        } else {
            Ok(AugmentedBundle::identity(x, self.n_views()))
        }
    }

    pub fn forward_batch(&self, batch: &Batch, mode: Mode) -> Result<(BatchOutput, Tape)> {
        self.check_input(batch.channels, batch.len)?;
        if batch.views.len() < self.n_views() {
            return Err(Error::shape(
                format!("{} views", self.n_views()),
                batch.views.len(),
            ));
        }
        let (b, t) = (batch.batch, batch.len);
        let mut features = Vec::with_capacity(self.n_views());
        let mut expert_caches = Vec::with_capacity(self.n_views());
        for (expert, view) in self.experts.iter().zip(&batch.views) {
            let (f, cache) = expert.forward(view, b, t, mode);
            features.push(f);
            expert_caches.push(cache);
        }
        let (alphas, gate_cache) = match &self.gate {
            Some(gate) => {
                let (z, cache) = gate.forward(&batch.stacked(), b, t, mode);
                (Some(softmax_rows(&z)), Some(cache))
            }
            None => (None, None),
        };
        let fused = match self.variant {
            Variant::Proposed => fuse(alphas.as_ref().expect("gate output"), &features),
            Variant::NoAug => features[0].clone(),
            Variant::Concat => {
                let views: Vec<_> = features.iter().map(|f| f.view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("equal batch sizes")
            }
        };
        let (logits, cls_cache) = self.classifier.forward(&fused);
        Ok((
            BatchOutput {
                logits,
                alphas,
                features,
                fused,
            },
            Tape {
                mode,
                experts: expert_caches,
                gate: gate_cache,
                classifier: cls_cache,
            },
        ))
    }

    /// Loss of a batch plus the gradients of that loss with respect to the
    /// logits and to each expert's features (consistency term only).
    fn loss_terms(
        &self,
        out: &BatchOutput,
        labels: &[usize],
        lambda: f64,
    ) -> Result<(LossBreakdown, Array2<f64>, Option<Vec<Array2<f64>>>)> {
        for &l in labels {
            if l >= self.arch.n_classes {
                return Err(Error::Label {
                    label: l,
                    n_classes: self.arch.n_classes,
                });
            }
        }
        let (ce, dlogits) = cross_entropy_batch(&out.logits, labels)?;
        if out.features.len() < 2 {
            return Ok((LossBreakdown::new(ce, 0.0, 0.0), dlogits, None));
        }
        let (con, mut dfeat) = consistency_batch(&out.features)?;
        for d in dfeat.iter_mut() {
            *d *= lambda;
        }
        Ok((LossBreakdown::new(ce, con, lambda), dlogits, Some(dfeat)))
    }

    /// Loss of a batch without touching gradients or running statistics.
    pub fn loss(
        &self,
        batch: &Batch,
        labels: &[usize],
        lambda: f64,
        mode: Mode,
    ) -> Result<LossBreakdown> {
        let (out, _) = self.forward_batch(batch, mode)?;
        Ok(self.loss_terms(&out, labels, lambda)?.0)
    }

    /// [`GatedModel::loss`] plus the activation signature of the pass.
    pub fn loss_with_signature(
        &self,
        batch: &Batch,
        labels: &[usize],
        lambda: f64,
        mode: Mode,
    ) -> Result<(LossBreakdown, u64)> {
        let (out, tape) = self.forward_batch(batch, mode)?;
        Ok((
            self.loss_terms(&out, labels, lambda)?.0,
            tape.activation_signature(),
        ))
    }

    /// Forward in training mode, then accumulate `d L_total / d theta` into
    /// every parameter's gradient and update batch-norm running statistics.
    /// Gradients are not zeroed first.
    pub fn accumulate_gradients(
        &mut self,
        batch: &Batch,
        labels: &[usize],
        lambda: f64,
    ) -> Result<LossBreakdown> {
        let (out, tape) = self.forward_batch(batch, Mode::Train)?;
        let (loss, dlogits, dcon) = self.loss_terms(&out, labels, lambda)?;
        self.backward(&out, &tape, &dlogits, dcon)?;
        self.update_running(&tape);
        Ok(loss)
    }

    fn backward(
        &mut self,
        out: &BatchOutput,
        tape: &Tape,
        dlogits: &Array2<f64>,
        dcon: Option<Vec<Array2<f64>>>,
    ) -> Result<()> {
        let dfused = self.classifier.backward(&tape.classifier, dlogits);
        let d = self.arch.feature_dim;
        let mut dfeat: Vec<Array2<f64>> =
            dcon.unwrap_or_else(|| vec![Array2::zeros(out.fused.dim()); out.features.len()]);
        match self.variant {
            Variant::NoAug => dfeat[0] += &dfused,
            Variant::Concat => {
                for (n, df) in dfeat.iter_mut().enumerate() {
                    *df += &dfused.slice(s![.., n * d..(n + 1) * d]);
                }
            }
            Variant::Proposed => {
                let alphas = out.alphas.as_ref().expect("gate output");
                let mut dalpha = Array2::zeros(alphas.dim());
                for (n, (f, df)) in out.features.iter().zip(dfeat.iter_mut()).enumerate() {
                    for b in 0..alphas.nrows() {
                        dalpha[[b, n]] = f.row(b).dot(&dfused.row(b));
                        df.row_mut(b).scaled_add(alphas[[b, n]], &dfused.row(b));
                    }
                }
                let dz = softmax_rows_backward(alphas, &dalpha);
                let gate = self.gate.as_mut().expect("proposed variant has a gate");
                gate.backward(tape.gate.as_ref().expect("gate cache"), &dz, tape.mode);
            }
        }
        for ((expert, cache), df) in self.experts.iter_mut().zip(&tape.experts).zip(&dfeat) {
            expert.backward(cache, df, tape.mode);
        }
        Ok(())
    }

    fn update_running(&mut self, tape: &Tape) {
        if tape.mode != Mode::Train {
            return;
        }
        for (expert, cache) in self.experts.iter_mut().zip(&tape.experts) {
            expert.update_running(cache);
        }
        if let (Some(gate), Some(cache)) = (self.gate.as_mut(), tape.gate.as_ref()) {
            gate.update_running(cache);
        }
    }

    pub fn forward_bundle(&self, bundle: &AugmentedBundle, mode: Mode) -> Result<ForwardOutput> {
        let batch = Batch::from_bundles(std::slice::from_ref(bundle), self.n_views())?;
        Ok(self.forward_batch(&batch, mode)?.0.sample(0))
    }

    /// Full forward pass for one series: augmented views in training mode,
    /// replicated input in evaluation mode.
    pub fn forward(
        &self,
        x: &TimeSeries,
        cfg: &AugmentConfig,
        rng: &mut RngStream,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let bundle = self.bundle_for(x, cfg, rng, mode == Mode::Train)?;
        self.forward_bundle(&bundle, mode)
    }

    /// Eval-mode logits for many series, computed in chunks.
    pub fn predict_logits(&self, bundles: &[AugmentedBundle]) -> Result<Array2<f64>> {
        const CHUNK: usize = 128;
        let mut rows = Vec::with_capacity(bundles.len());
        for chunk in bundles.chunks(CHUNK) {
            let batch = Batch::from_bundles(chunk, self.n_views())?;
            rows.push(self.forward_batch(&batch, Mode::Eval)?.0.logits);
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }
}

impl Parameterized for GatedModel {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.experts.iter().flat_map(|e| e.params()).collect();
        if let Some(g) = &self.gate {
            p.extend(g.params());
        }
        p.extend(self.classifier.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let GatedModel {
            experts,
            gate,
            classifier,
            ..
        } = self;
        let mut p: Vec<&mut Param> = experts.iter_mut().flat_map(|e| e.params_mut()).collect();
        if let Some(g) = gate {
            p.extend(g.params_mut());
        }
        p.extend(classifier.params_mut());
        p
    }
    fn buffers(&self) -> Vec<&Array1<f64>> {
        let mut b: Vec<&Array1<f64>> = self.experts.iter().flat_map(|e| e.buffers()).collect();
        if let Some(g) = &self.gate {
            b.extend(g.buffers());
        }
        b
    }
    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        let GatedModel { experts, gate, .. } = self;
        let mut b: Vec<&mut Array1<f64>> =
            experts.iter_mut().flat_map(|e| e.buffers_mut()).collect();
        if let Some(g) = gate {
            b.extend(g.buffers_mut());
        }
        b
    }
}

/// `fused[b] = sum_n alphas[b, n] * features[n][b]`.
fn fuse(alphas: &Array2<f64>, features: &[Array2<f64>]) -> Array2<f64> {
    let mut fused = Array2::zeros(features[0].dim());
    for (n, f) in features.iter().enumerate() {
        for b in 0..f.nrows() {
            fused.row_mut(b).scaled_add(alphas[[b, n]], &f.row(b));
        }
    }
    fused
}

/// Feature vector of one expert for a single `[C x T]` input.
pub fn expert_forward(expert: &Tower, x: &Array2<f64>, mode: Mode) -> Result<Array1<f64>> {
    let (c, t) = x.dim();
    if c != expert.trunk.in_channels() {
        return Err(Error::shape(
            format!("{} channels", expert.trunk.in_channels()),
            c,
        ));
    }
    if expert.trunk.flat_width(t) != expert.head.inputs() {
        return Err(Error::shape(
            format!("flattened width {}", expert.head.inputs()),
            expert.trunk.flat_width(t),
        ));
    }
    let packed = pack_channels_last(std::iter::once(x), c, t);
    let (f, _) = expert.forward(&packed, 1, t, mode);
    Ok(f.row(0).to_owned())
}

/// Gating weights for one bundle.
pub fn gating_forward(gate: &Tower, bundle: &AugmentedBundle, mode: Mode) -> Result<Array1<f64>> {
    let (c, t) = bundle.shape();
    let n = gate.head.outputs();
    if bundle.len() != n || n * c != gate.trunk.in_channels() {
        return Err(Error::shape(
            format!("{n} views feeding {} channels", gate.trunk.in_channels()),
            format!("{} views of {c} channels", bundle.len()),
        ));
    }
    let batch = Batch::from_bundles(std::slice::from_ref(bundle), n)?;
    let (z, _) = gate.forward(&batch.stacked(), 1, t, mode);
    Ok(softmax_rows(&z).row(0).to_owned())
}

/// `sum_n alphas[n] * features[n]`.
pub fn combine_features(
    alphas: ArrayView1<'_, f64>,
    features: &[ArrayView1<'_, f64>],
) -> Result<Array1<f64>> {
    if alphas.len() != features.len() || features.is_empty() {
        return Err(Error::shape(
            format!("{} features", alphas.len()),
            features.len(),
        ));
    }
    let d = features[0].len();
    let mut fused = Array1::zeros(d);
    for (a, f) in alphas.iter().zip(features) {
        if f.len() != d {
            return Err(Error::shape(format!("feature dim {d}"), f.len()));
        }
        fused.scaled_add(*a, f);
    }
    Ok(fused)
}

/// Raw class logits for a fused feature vector.
pub fn classifier_forward(classifier: &Mlp, fused: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if fused.len() != classifier.inputs() {
        return Err(Error::shape(classifier.inputs(), fused.len()));
    }
    let x = fused.to_owned().insert_axis(Axis(0));
    Ok(classifier.forward(&x).0.row(0).to_owned())
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_arch() -> ArchConfig {
        ArchConfig::standard(1, 16, 3).with_widths(&[2, 3, 4], 8)
    }

    fn series(len: usize, seed: u64) -> TimeSeries {
        let mut rng = RngStream::new(seed);
        TimeSeries::univariate((0..len).map(|_| rng.normal(0.0, 0.5)).collect(), 1).unwrap()
    }

    #[test]
    fn arch_validation() {
        assert!(ArchConfig::standard(1, 128, 2).validate().is_ok());
        assert!(ArchConfig::standard(1, 7, 2).validate().is_err());
        let mut a = ArchConfig::standard(1, 128, 2);
        a.n_experts = 1;
        assert!(a.validate().is_err());
        let mut a = ArchConfig::standard(1, 128, 2);
        a.feature_dim = 256;
        assert!(a.validate().is_err());
    }

    #[test]
    fn flat_width_for_standard_input() {
        let a = ArchConfig::standard(1, 128, 2);
        assert_eq!(a.flat_width(), 2048);
        let m = GatedModel::new(a, Variant::NoAug, &mut RngStream::new(0)).unwrap();
        assert_eq!(m.experts[0].head.inputs(), 2048);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&tiny_arch(), &mut RngStream::new(5)).unwrap();
        let b = init_model(&tiny_arch(), &mut RngStream::new(5)).unwrap();
        let c = init_model(&tiny_arch(), &mut RngStream::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn variant_shapes() {
        let arch = tiny_arch();
        let mut rng = RngStream::new(1);
        let p = GatedModel::new(arch.clone(), Variant::Proposed, &mut rng).unwrap();
        let c = GatedModel::new(arch.clone(), Variant::Concat, &mut rng).unwrap();
        let n = GatedModel::new(arch.clone(), Variant::NoAug, &mut rng).unwrap();
        assert_eq!(p.classifier_input_width(), 8);
        assert_eq!(c.classifier_input_width(), 5 * 8);
        assert_eq!(n.classifier_input_width(), 8);
        assert_eq!(p.gate.as_ref().unwrap().head.outputs(), 5);
        assert!(c.gate.is_none() && n.gate.is_none());
        assert_eq!(n.n_views(), 1);
    }

    #[test]
    fn combine_examples() {
        let f = [array![1.0, 0.0], array![0.0, 1.0]];
        let views: Vec<_> = f.iter().map(|a| a.view()).collect();
        let fused = combine_features(array![0.3, 0.7].view(), &views).unwrap();
        assert_eq!(fused, array![0.3, 0.7]);
        let fused = combine_features(array![1.0, 0.0].view(), &views).unwrap();
        assert_eq!(fused, f[0]);
        assert!(combine_features(array![1.0].view(), &views).is_err());
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
        assert_eq!(argmax(array![0.1, 0.9, 0.9].view()), 1);
    }

    #[test]
    fn zero_input_gives_finite_features() {
        let m = init_model(&tiny_arch(), &mut RngStream::new(2)).unwrap();
        let x = Array2::zeros((1, 16));
        for mode in [Mode::Train, Mode::Eval] {
            let f = expert_forward(&m.experts[0], &x, mode).unwrap();
            assert!(f.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zeroed_gate_head_gives_uniform_alphas() {
        let mut m = init_model(&tiny_arch(), &mut RngStream::new(3)).unwrap();
        let gate = m.gate.as_mut().unwrap();
        let last = gate.head.layers.last_mut().unwrap();
        last.weight.value.fill(0.0);
        last.bias.value.fill(0.0);
        let x = series(16, 9);
        let bundle = apply_all(&x, &AugmentConfig::default(), &mut RngStream::new(4)).unwrap();
        let a = gating_forward(m.gate.as_ref().unwrap(), &bundle, Mode::Eval).unwrap();
        for v in a.iter() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_output_invariants() {
        let m = init_model(&tiny_arch(), &mut RngStream::new(8)).unwrap();
        let cfg = AugmentConfig::default();
        for seed in 0..5 {
            let x = series(16, seed);
            let out = m
                .forward(&x, &cfg, &mut RngStream::new(seed), Mode::Train)
                .unwrap();
            let a = out.alphas.as_ref().unwrap();
            assert!((a.sum() - 1.0).abs() < 1e-6);
            assert!(a.iter().all(|&v| v >= 0.0));
            let views: Vec<_> = out.features.iter().map(|f| f.view()).collect();
            let fused = combine_features(a.view(), &views).unwrap();
            for (u, v) in fused.iter().zip(out.fused.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
            let logits = classifier_forward(&m.classifier, out.fused.view()).unwrap();
            for (u, v) in logits.iter().zip(out.logits.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let m = init_model(&tiny_arch(), &mut RngStream::new(8)).unwrap();
        let x = series(16, 1);
        let cfg = AugmentConfig::default();
        let a = m
            .forward(&x, &cfg, &mut RngStream::new(1), Mode::Eval)
            .unwrap();
        let b = m
            .forward(&x, &cfg, &mut RngStream::new(2), Mode::Eval)
            .unwrap();
        assert_eq!(a, b);
        let c = m
            .forward(&x, &cfg, &mut RngStream::new(3), Mode::Train)
            .unwrap();
        let d = m
            .forward(&x, &cfg, &mut RngStream::new(3), Mode::Train)
            .unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn classifier_zero_input_gives_composed_bias() {
        let mut m = init_model(&tiny_arch(), &mut RngStream::new(8)).unwrap();
        m.classifier.layers[0].bias.value.fill(0.25);
        m.classifier.layers[1].bias.value.fill(-0.5);
        let z = classifier_forward(&m.classifier, Array1::zeros(8).view()).unwrap();
        let hidden = Array1::from_elem(8, 0.25);
        let want = hidden.dot(&m.classifier.layers[1].weight.value) - 0.5;
        for (a, b) in z.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(z.len(), 3);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = init_model(&tiny_arch(), &mut RngStream::new(8)).unwrap();
        let x = series(20, 1);
        assert!(m
            .forward(
                &x,
                &AugmentConfig::default(),
                &mut RngStream::new(0),
                Mode::Eval
            )
            .is_err());
        assert!(expert_forward(&m.experts[0], &Array2::zeros((2, 16)), Mode::Eval).is_err());
    }
}
