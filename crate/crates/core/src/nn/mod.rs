//! Minimal layer library with hand-written backward passes.
//!
//! Activations are stored channels-last as `[B * T, C]` matrices, row
//! `b * T + t`. Flattening a `[B * T, C]` activation to `[B, T * C]` is then a
//! plain reshape.

mod layers;
mod tower;

pub use layers::{BatchNorm1d, Conv1d, Dense, MaxPool1d};
pub use tower::{ConvBlock, Mlp, MlpCache, Tower, TowerCache, Trunk, TrunkCache};

use ndarray::{Array1, Array2};

use crate::rng::RngStream;

/// Whether batch norm uses batch statistics (`Train`) or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable tensor with its accumulated gradient. Biases are `[1 x n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.dim());
        Self { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Array2::zeros((rows, cols)))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut RngStream) -> Self {
        Self::new(Array2::from_shape_simple_fn((rows, cols), || {
            rng.uniform(-bound, bound)
        }))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Uniform initialization bound for ReLU layers with the given fan-in.
pub fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Uniform initialization bound for linear output layers.
pub fn lecun_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

/// Anything holding trainable parameters and non-trainable buffers, visited
/// in a fixed order. Optimizer state and checkpoints depend on that order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn buffers(&self) -> Vec<&Array1<f64>> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        Vec::new()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Elementwise ReLU.
pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Backward of ReLU given its output.
pub fn relu_backward(out: &Array2<f64>, dout: &Array2<f64>) -> Array2<f64> {
    let mut dx = dout.clone();
    dx.zip_mut_with(out, |d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Backward of row-wise softmax given its output `p`:
/// `dz = p * (dp - <dp, p>)`.
pub fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(p.dim());
    for ((p, dp), mut dz) in p.rows().into_iter().zip(dp.rows()).zip(dz.rows_mut()) {
        let inner = p.dot(&dp);
        for j in 0..p.len() {
            dz[j] = p[j] * (dp[j] - inner);
        }
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = array![[0.3, -1.0, 2.0], [0.0, 0.5, 0.1]];
        let w = array![[1.0, 2.0, -1.0], [0.5, -0.3, 0.7]];
        let f = |z: &Array2<f64>| (softmax_rows(z) * &w).sum();
        let dz = softmax_rows_backward(&softmax_rows(&z), &w);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                let fd = (f(&zp) - f(&zm)) / (2.0 * h);
                assert!((fd - dz[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&array![[1000.0, -1000.0, 0.0], [1.0, 1.0, 1.0]]);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-15);
        }
        assert!((p[[1, 0]] - 1.0 / 3.0).abs() < 1e-15);
    }
}
