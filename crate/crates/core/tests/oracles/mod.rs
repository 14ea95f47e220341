//! Reference implementations used only by tests. They share no code with the
//! library.

#![allow(dead_code)]

/// Natural cubic spline through `(xs, ys)` evaluated at `q`. Second
/// derivatives come from the full `n x n` system solved by Gaussian
/// elimination with partial pivoting; evaluation uses the power form
/// `a + b d + c d^2 + e d^3` on each interval.
pub fn spline_dense(xs: &[f64], ys: &[f64], q: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    a[0][0] = 1.0;
    a[n - 1][n - 1] = 1.0;
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        a[i][i - 1] = h0;
        a[i][i] = 2.0 * (h0 + h1);
        a[i][i + 1] = h1;
        rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
    }
    let m = gauss_solve(a, rhs);
    q.iter()
        .map(|&x| {
            let mut k = 0;
            while k + 2 < n && x > xs[k + 1] {
                k += 1;
            }
            let h = xs[k + 1] - xs[k];
            let b = (ys[k + 1] - ys[k]) / h - h * (2.0 * m[k] + m[k + 1]) / 6.0;
            let c = m[k] / 2.0;
            let e = (m[k + 1] - m[k]) / (6.0 * h);
            let d = x - xs[k];
            ys[k] + d * (b + d * (c + d * e))
        })
        .collect()
}

pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Piecewise-linear signal through `v` at integer positions.
pub fn linear(v: &[f64], s: f64) -> f64 {
    if s <= 0.0 {
        return v[0];
    }
    let last = (v.len() - 1) as f64;
    if s >= last {
        return v[v.len() - 1];
    }
    let i = s.floor() as usize;
    v[i] * (1.0 - (s - i as f64)) + v[i + 1] * (s - i as f64)
}

/// Dense samples of the piecewise-linear signal, `factor` per unit step.
pub fn oversample(v: &[f64], factor: usize) -> Vec<f64> {
    let n = (v.len() - 1) * factor + 1;
    (0..n)
        .map(|k| linear(v, k as f64 / factor as f64))
        .collect()
}

/// Reads an oversampled signal at position `s` (in original units).
pub fn read_dense(dense: &[f64], factor: usize, s: f64) -> f64 {
    linear(dense, s * factor as f64)
}

/// Window warp via oversampled signals: stretch the window, splice, then read
/// the spliced signal at `T` evenly spaced positions.
pub fn window_warp_oracle(x: &[f64], start: usize, width: usize, scale: f64) -> Vec<f64> {
    const F: usize = 100;
    let t = x.len();
    let new_w = ((scale * width as f64).round() as usize).max(2);
    let dense = oversample(x, F);
    let mut spliced: Vec<f64> = x[..start].to_vec();
    for i in 0..new_w {
        let s = start as f64 + i as f64 * (width - 1) as f64 / (new_w - 1) as f64;
        spliced.push(read_dense(&dense, F, s));
    }
    spliced.extend_from_slice(&x[start + width..]);
    let sd = oversample(&spliced, F);
    let l = (spliced.len() - 1) as f64;
    (0..t)
        .map(|i| read_dense(&sd, F, i as f64 * l / (t - 1) as f64))
        .collect()
}

/// Time warp via an oversampled warped-time curve: for each output index,
/// scan the dense grid for the first crossing and read the input there.
pub fn time_warp_oracle(x: &[f64], speed: &[f64]) -> Vec<f64> {
    const F: usize = 100;
    let t = x.len();
    let mut cum = Vec::with_capacity(t);
    let mut acc = 0.0;
    for s in speed {
        acc += s.max(0.1);
        cum.push(acc);
    }
    let (lo, hi) = (cum[0], cum[t - 1]);
    let tau: Vec<f64> = cum
        .iter()
        .map(|c| (c - lo) / (hi - lo) * (t - 1) as f64)
        .collect();
    let dense_tau = oversample(&tau, F);
    let dense_x = oversample(x, F);
    (0..t)
        .map(|i| {
            let target = i as f64;
            if i == 0 {
                return x[0];
            }
            if i == t - 1 {
                return x[t - 1];
            }
            let k = dense_tau.iter().position(|&v| v >= target).unwrap().max(1);
            let (a, b) = (dense_tau[k - 1], dense_tau[k]);
            let u = (k - 1) as f64 + (target - a) / (b - a);
            linear(&dense_x, u)
        })
        .collect()
}
