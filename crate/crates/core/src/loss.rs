//! Cross-entropy, the feature consistency loss and the weighted total.
//!
//! Batch values are means over batch elements, so `lambda` keeps the same
//! meaning at any batch size.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub con: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(ce: f64, con: f64, lambda: f64) -> Self {
        Self {
            ce,
            con,
            total: total_loss(ce, con, lambda),
            lambda,
        }
    }
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Label {
            label,
            n_classes: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[label])
}

pub fn log_sum_exp(z: ArrayView1<'_, f64>) -> f64 {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over a `[B, K]` logit batch and the gradient of that
/// mean with respect to the logits.
pub fn cross_entropy_batch(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let b = logits.nrows();
    if labels.len() != b {
        return Err(Error::shape(format!("{b} labels"), labels.len()));
    }
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let lse = log_sum_exp(row);
        total += cross_entropy(row, y)?;
        for (gj, zj) in g.iter_mut().zip(row) {
            *gj = (zj - lse).exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    Ok((total / b as f64, grad))
}

fn check_features(features: &[ArrayView1<'_, f64>]) -> Result<()> {
    if features.len() < 2 {
        return Err(Error::shape("at least 2 feature vectors", features.len()));
    }
    let d = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::shape(format!("feature dim {d}"), f.len()));
    }
    Ok(())
}

/// Mean computed as `f_0 + mean(f_n - f_0)`, which is exactly `f_0` when
/// all features are equal.
fn feature_mean(features: &[ArrayView1<'_, f64>]) -> Array1<f64> {
    let base = &features[0];
    let mut shift = Array1::zeros(base.len());
    for f in &features[1..] {
        shift += &(f - base);
    }
    base + &(shift / features.len() as f64)
}

/// `0.5 * sum_n ||f_n - mean(f)||^2` for the `N` expert features of one input.
pub fn consistency_loss(features: &[ArrayView1<'_, f64>]) -> Result<f64> {
    check_features(features)?;
    let mean = feature_mean(features);
    Ok(0.5
        * features
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&mean)
                    .map(|(a, m)| (a - m) * (a - m))
                    .sum::<f64>()
            })
            .sum::<f64>())
}

/// Gradient of [`consistency_loss`]: `f_n - mean(f)` for each `n`.
pub fn consistency_grad(features: &[ArrayView1<'_, f64>]) -> Result<Vec<Array1<f64>>> {
    check_features(features)?;
    let mean = feature_mean(features);
    Ok(features.iter().map(|f| f - &mean).collect())
}

/// Batch-mean consistency loss over `N` feature batches of shape `[B, D]`,
/// plus the gradient of that mean with respect to every feature batch.
pub fn consistency_batch(features: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
    if features.len() < 2 {
        return Err(Error::shape("at least 2 feature batches", features.len()));
    }
    let dim = features[0].dim();
    if let Some(f) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::shape(format!("{dim:?}"), format!("{:?}", f.dim())));
    }
    let b = dim.0 as f64;
    let n = features.len() as f64;
    let base = &features[0];
    let mut shift = Array2::<f64>::zeros(dim);
    for f in &features[1..] {
        shift += &(f - base);
    }
    let mean = base + &(shift / n);
    let grads: Vec<Array2<f64>> = features.iter().map(|f| (f - &mean) / b).collect();
    let value = 0.5
        * features
            .iter()
            .map(|f| {
                let d = f - &mean;
                (&d * &d).sum()
            })
            .sum::<f64>()
        / b;
    Ok((value, grads))
}

/// Per-element consistency loss for `N` feature batches `[B, D]`.
pub fn consistency_per_sample(features: &[Array2<f64>]) -> Result<Vec<f64>> {
    let b = features.first().map_or(0, |f| f.nrows());
    (0..b)
        .map(|i| {
            let rows: Vec<_> = features.iter().map(|f| f.index_axis(Axis(0), i)).collect();
            consistency_loss(&rows)
        })
        .collect()
}

pub fn total_loss(ce: f64, con: f64, lambda: f64) -> f64 {
    ce + lambda * con
}
