use ndarray::{Array1, Array2, Axis};

use super::{he_bound, Mode, Param, Parameterized};
use crate::rng::RngStream;

/// 1-D convolution with "same" zero padding, computed as an im2col product.
/// Weight layout is `[K * C_in, C_out]`, row `k * C_in + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut RngStream,
    ) -> Self {
        let fan_in = in_channels * kernel;
        Self {
            weight: Param::uniform(fan_in, out_channels, he_bound(fan_in), rng),
            bias: Param::zeros(1, out_channels),
            in_channels,
            out_channels,
            kernel,
        }
    }

    fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn im2col(&self, x: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
        let cin = self.in_channels;
        let k_total = self.kernel;
        let pad = self.pad() as isize;
        let mut cols = Array2::<f64>::zeros((batch * len, k_total * cin));
        let xs = x.as_slice().expect("standard layout");
        let cs = cols.as_slice_mut().expect("standard layout");
        let width = k_total * cin;
        for b in 0..batch {
            for t in 0..len {
                let dst_row = (b * len + t) * width;
                for k in 0..k_total {
                    let src_t = t as isize + k as isize - pad;
                    if src_t < 0 || src_t >= len as isize {
                        continue;
                    }
                    let src = (b * len + src_t as usize) * cin;
                    let dst = dst_row + k * cin;
                    cs[dst..dst + cin].copy_from_slice(&xs[src..src + cin]);
                }
            }
        }
        cols
    }

    /// Returns the output and the im2col matrix needed for backward.
    pub fn forward(&self, x: &Array2<f64>, batch: usize, len: usize) -> (Array2<f64>, Array2<f64>) {
        debug_assert_eq!(x.dim(), (batch * len, self.in_channels));
        let cols = self.im2col(x, batch, len);
        let mut out = cols.dot(&self.weight.value);
        out += &self.bias.value.row(0);
        (out, cols)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(
        &mut self,
        cols: &Array2<f64>,
        dout: &Array2<f64>,
        batch: usize,
        len: usize,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        self.weight.grad += &cols.t().dot(dout);
        self.bias
            .grad
            .row_mut(0)
            .scaled_add(1.0, &dout.sum_axis(Axis(0)));
        if !need_input_grad {
            return None;
        }
        let dcols = dout.dot(&self.weight.value.t());
        let cin = self.in_channels;
        let width = self.kernel * cin;
        let pad = self.pad() as isize;
        let mut dx = Array2::<f64>::zeros((batch * len, cin));
        let dxs = dx.as_slice_mut().expect("standard layout");
        let dcs = dcols.as_slice().expect("standard layout");
        for b in 0..batch {
            for t in 0..len {
                let src_row = (b * len + t) * width;
                for k in 0..self.kernel {
                    let dst_t = t as isize + k as isize - pad;
                    if dst_t < 0 || dst_t >= len as isize {
                        continue;
                    }
                    let dst = (b * len + dst_t as usize) * cin;
                    let src = src_row + k * cin;
                    for c in 0..cin {
                        dxs[dst + c] += dcs[src + c];
                    }
                }
            }
        }
        Some(dx)
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Per-channel batch normalization over all `B * T` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var_unbiased: Array1<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Array2::ones((1, channels))),
            beta: Param::zeros(1, channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, BatchNormCache) {
        let m = x.nrows() as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_axis(Axis(0)).expect("nonempty batch");
                let centered = x - &mean;
                let var = (&centered * &centered).sum_axis(Axis(0)) / m;
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma.value.row(0) + &self.beta.value.row(0);
        let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var };
        (
            y,
            BatchNormCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var_unbiased: unbiased,
            },
        )
    }

    pub fn backward(
        &mut self,
        cache: &BatchNormCache,
        dy: &Array2<f64>,
        mode: Mode,
    ) -> Array2<f64> {
        self.gamma
            .grad
            .row_mut(0)
            .scaled_add(1.0, &(dy * &cache.xhat).sum_axis(Axis(0)));
        self.beta
            .grad
            .row_mut(0)
            .scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let dxhat = dy * &self.gamma.value.row(0);
        match mode {
            Mode::Eval => dxhat * &cache.inv_std,
            Mode::Train => {
                // dx = inv_std / M * (M dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                let m = dy.nrows() as f64;
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                let mut dx = dxhat * m;
                dx -= &sum_d;
                dx -= &(&cache.xhat * &sum_dx);
                dx * &(&cache.inv_std / m)
            }
        }
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        let mom = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - mom) + &cache.batch_mean * mom;
        self.running_var = &self.running_var * (1.0 - mom) + &cache.batch_var_unbiased * mom;
    }
}

impl Parameterized for BatchNorm1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
    fn buffers(&self) -> Vec<&Array1<f64>> {
        vec![&self.running_mean, &self.running_var]
    }
    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

/// Non-overlapping max pooling along time; a trailing remainder is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    pub size: usize,
}

impl MaxPool1d {
    pub fn out_len(&self, len: usize) -> usize {
        len / self.size
    }

    /// Returns the pooled activation and, per output element, the flat index
    /// of the winning input element (first maximum on ties).
    pub fn forward(&self, x: &Array2<f64>, batch: usize, len: usize) -> (Array2<f64>, Vec<usize>) {
        let c = x.ncols();
        let out_len = self.out_len(len);
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((batch * out_len, c));
        let mut arg = vec![0usize; batch * out_len * c];
        let os = out.as_slice_mut().expect("standard layout");
        for b in 0..batch {
            for t in 0..out_len {
                let orow = (b * out_len + t) * c;
                for ch in 0..c {
                    let mut best_i = (b * len + t * self.size) * c + ch;
                    let mut best = xs[best_i];
                    for j in 1..self.size {
                        let i = (b * len + t * self.size + j) * c + ch;
                        if xs[i] > best {
                            best = xs[i];
                            best_i = i;
                        }
                    }
                    os[orow + ch] = best;
                    arg[orow + ch] = best_i;
                }
            }
        }
        (out, arg)
    }

    pub fn backward(&self, dout: &Array2<f64>, arg: &[usize], in_rows: usize) -> Array2<f64> {
        let c = dout.ncols();
        let mut dx = Array2::<f64>::zeros((in_rows, c));
        let dxs = dx.as_slice_mut().expect("standard layout");
        for (g, &i) in dout.iter().zip(arg) {
            dxs[i] += g;
        }
        dx
    }
}

/// Fully connected layer, weight `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, bound: f64, rng: &mut RngStream) -> Self {
        Self {
            weight: Param::uniform(inputs, outputs, bound, rng),
            bias: Param::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight.value);
        out += &self.bias.value.row(0);
        out
    }

    pub fn backward(&mut self, x: &Array2<f64>, dout: &Array2<f64>) -> Array2<f64> {
        self.weight.grad += &x.t().dot(dout);
        self.bias
            .grad
            .row_mut(0)
            .scaled_add(1.0, &dout.sum_axis(Axis(0)));
        dout.dot(&self.weight.value.t())
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
