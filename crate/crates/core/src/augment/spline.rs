//! Natural cubic spline interpolation.

use crate::error::{Error, Result};

/// Natural cubic spline through `(xs[i], ys[i])`, stored as knot values plus
/// second derivatives (zero at both ends).
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::Knots(format!("need at least 2 knots, got {n}")));
        }
        if ys.len() != n {
            return Err(Error::Knots(format!(
                "{n} knot positions but {} knot values",
                ys.len()
            )));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::Knots("non-finite knot".into()));
        }
        if let Some(i) = (1..n).find(|&i| xs[i] <= xs[i - 1]) {
            return Err(Error::Knots(format!(
                "positions must be strictly increasing (x[{}] = {} >= x[{i}] = {})",
                i - 1,
                xs[i - 1],
                xs[i]
            )));
        }

        // Tridiagonal system for interior second derivatives:
        //   h[i-1] m[i-1] + 2 (h[i-1] + h[i]) m[i] + h[i] m[i+1] = rhs[i]
        // with m[0] = m[n-1] = 0. Solved by the Thomas algorithm.
        let mut m = vec![0.0; n];
        if n > 2 {
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
            }
            // forward elimination; sub/super diagonal entries are h[j] (j >= 1)
            for j in 1..k {
                let w = h[j] / diag[j - 1];
                diag[j] -= w * h[j];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
            }
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.span();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfSpan { x, lo, hi });
        }
        Ok(self.eval_in_span(x))
    }

    fn eval_in_span(&self, x: f64) -> f64 {
        let n = self.xs.len();
        // interval i with xs[i] <= x < xs[i+1]; the last knot maps to the last interval
        let i = (self.xs.partition_point(|&k| k <= x) - 1).min(n - 2);
        let h = self.xs[i + 1] - self.xs[i];
        let b = (x - self.xs[i]) / h;
        if b == 1.0 {
            return self.ys[i + 1];
        }
        let a = 1.0 - b;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        y0 + b * (y1 - y0)
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Evaluates the natural cubic spline through the knots at each query.
pub fn cubic_spline_eval(knot_x: &[f64], knot_y: &[f64], query_x: &[f64]) -> Result<Vec<f64>> {
    let spline = NaturalCubicSpline::new(knot_x, knot_y)?;
    query_x.iter().map(|&q| spline.eval(q)).collect()
}
