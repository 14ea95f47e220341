//! The five augmentation views (identity, jittering, magnitude warping, time
//! warping, window warping) and the primitives they are built on.
//!
//! Every transform maps a `[C x T]` matrix to a `[C x T]` matrix and draws
//! all of its randomness from the supplied [`RngStream`]. Warping curves and
//! windows are shared across channels of one series.

mod resample;
mod spline;

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::series::TimeSeries;

pub use resample::{interp_at, resample_linear};
pub use spline::{cubic_spline_eval, NaturalCubicSpline};

thread_local! {
    static INVOCATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of stochastic transform calls made on this thread.
pub fn invocation_count() -> u64 {
    INVOCATIONS.with(|c| c.get())
}

fn count_invocation() {
    INVOCATIONS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub jitter_sigma: f64,
    pub mw_knots: usize,
    pub mw_mean: f64,
    pub mw_sigma: f64,
    pub tw_knots: usize,
    pub tw_sigma: f64,
    pub ww_ratio: f64,
    pub ww_scales: Vec<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.03,
            mw_knots: 4,
            mw_mean: 1.0,
            mw_sigma: 0.2,
            tw_knots: 4,
            tw_sigma: 0.2,
            ww_ratio: 0.10,
            ww_scales: vec![0.5, 2.0],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.jitter_sigma >= 0.0 && self.mw_sigma >= 0.0 && self.tw_sigma >= 0.0) {
            return bad("augmentation sigmas must be >= 0");
        }
        if self.mw_knots < 2 || self.tw_knots < 2 {
            return bad("knot counts must be >= 2");
        }
        if !(self.ww_ratio > 0.0 && self.ww_ratio < 1.0) {
            return bad("window ratio must lie in (0, 1)");
        }
        if self.ww_scales.is_empty() || self.ww_scales.iter().any(|s| !(*s > 0.0)) {
            return bad("window scales must be nonempty and positive");
        }
        if !self.mw_mean.is_finite() {
            return bad("magnitude-warp mean must be finite");
        }
        Ok(())
    }

    /// Copy with every noise scale set to zero.
    pub fn zero_sigma(&self) -> Self {
        Self {
            jitter_sigma: 0.0,
            mw_sigma: 0.0,
            tw_sigma: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Identity,
    Jitter,
    MagnitudeWarp,
    TimeWarp,
    WindowWarp,
}

impl Method {
    /// Fixed view order of an [`AugmentedBundle`].
    pub const ALL: [Method; 5] = [
        Method::Identity,
        Method::Jitter,
        Method::MagnitudeWarp,
        Method::TimeWarp,
        Method::WindowWarp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::Jitter => "jitter",
            Method::MagnitudeWarp => "magnitude_warp",
            Method::TimeWarp => "time_warp",
            Method::WindowWarp => "window_warp",
        }
    }

    pub fn apply(
        self,
        x: &Array2<f64>,
        cfg: &AugmentConfig,
        rng: &mut RngStream,
    ) -> Result<Array2<f64>> {
        match self {
            Method::Identity => Ok(x.clone()),
            Method::Jitter => Ok(jitter(x, cfg.jitter_sigma, rng)),
            Method::MagnitudeWarp => magnitude_warp(x, cfg, rng),
            Method::TimeWarp => time_warp(x, cfg, rng),
            Method::WindowWarp => window_warp(x, cfg, rng),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .or(match norm.as_str() {
                "jittering" => Some(Method::Jitter),
                "magnitude_warping" | "mw" => Some(Method::MagnitudeWarp),
                "time_warping" | "tw" => Some(Method::TimeWarp),
                "window_warping" | "ww" => Some(Method::WindowWarp),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown augmentation method '{s}'")))
    }
}

/// The parallel views of one input; `views[0]` is the input itself.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBundle {
    pub views: Vec<Array2<f64>>,
    pub source_label: usize,
}

impl AugmentedBundle {
    /// `n` copies of the unaugmented input.
    pub fn identity(x: &TimeSeries, n: usize) -> Self {
        Self {
            views: vec![x.values().clone(); n],
            source_label: x.label(),
        }
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.views[0].dim()
    }
}

/// All five views of `x` in [`Method::ALL`] order, drawn sequentially from `rng`.
pub fn apply_all(
    x: &TimeSeries,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<AugmentedBundle> {
    cfg.validate()?;
    let views = Method::ALL
        .iter()
        .map(|m| m.apply(x.values(), cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentedBundle {
        views,
        source_label: x.label(),
    })
}

/// Additive i.i.d. `Normal(0, sigma^2)` noise.
pub fn jitter(x: &Array2<f64>, sigma: f64, rng: &mut RngStream) -> Array2<f64> {
    count_invocation();
    if sigma == 0.0 {
        return x.clone();
    }
    x.mapv(|v| v + rng.normal(0.0, sigma))
}

/// Evenly spaced knots over `[0, length - 1]`: `n_knots` interior knots with
/// `Normal(mu, sigma^2)` magnitudes and two fixed endpoint knots at `mu`.
/// Returns the natural cubic spline sampled at `0, 1, ..., length - 1`.
pub fn random_smooth_curve(
    length: usize,
    n_knots: usize,
    mu: f64,
    sigma: f64,
    rng: &mut RngStream,
) -> Vec<f64> {
    assert!(
        length >= 2 && n_knots >= 2,
        "curve needs length >= 2 and n_knots >= 2"
    );
    let total = n_knots + 2;
    let span = (length - 1) as f64;
    let segments = (total - 1) as f64;
    let xs: Vec<f64> = (0..total).map(|j| j as f64 * span / segments).collect();
    let ys: Vec<f64> = (0..total)
        .map(|j| {
            if j == 0 || j == total - 1 {
                mu
            } else {
                rng.normal(mu, sigma)
            }
        })
        .collect();
    let spline = NaturalCubicSpline::new(&xs, &ys).expect("evenly spaced knots are valid");
    (0..length)
        .map(|t| {
            spline
                .eval(t as f64)
                .expect("integer positions lie in the knot span")
        })
        .collect()
}

/// Elementwise product of every channel with a smooth random curve.
pub fn magnitude_warp(
    x: &Array2<f64>,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<Array2<f64>> {
    count_invocation();
    let curve = random_smooth_curve(x.ncols(), cfg.mw_knots, cfg.mw_mean, cfg.mw_sigma, rng);
    Ok(scale_by_curve(x, &curve))
}

pub fn scale_by_curve(x: &Array2<f64>, curve: &[f64]) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        row.iter_mut().zip(curve).for_each(|(v, w)| *v *= w);
    }
    out
}

/// Lower bound applied to the time-warp speed curve so cumulative time is
/// strictly increasing.
pub const MIN_WARP_SPEED: f64 = 0.1;

/// Smooth random distortion of the time axis driven by a speed curve with
/// mean 1.
pub fn time_warp(x: &Array2<f64>, cfg: &AugmentConfig, rng: &mut RngStream) -> Result<Array2<f64>> {
    count_invocation();
    let speed = random_smooth_curve(x.ncols(), cfg.tw_knots, 1.0, cfg.tw_sigma, rng);
    Ok(warp_with_speed(x, &speed))
}

/// Cumulative warped time for a speed curve, rescaled to run from `0` to
/// `T - 1`. Speeds are clamped to [`MIN_WARP_SPEED`].
pub fn warped_time(speed: &[f64]) -> Vec<f64> {
    let t = speed.len();
    let mut tau = Vec::with_capacity(t);
    let mut acc = 0.0;
    for &s in speed {
        acc += s.max(MIN_WARP_SPEED);
        tau.push(acc);
    }
    let first = tau[0];
    let range = tau[t - 1] - first;
    let span = (t - 1) as f64;
    for v in tau.iter_mut() {
        *v = (*v - first) * span / range;
    }
    tau[0] = 0.0;
    tau[t - 1] = span;
    tau
}

/// Applies the warp defined by `speed`: output index `t` reads the input at
/// the source time `u` where the warped time curve crosses `t`.
pub fn warp_with_speed(x: &Array2<f64>, speed: &[f64]) -> Array2<f64> {
    let t_len = x.ncols();
    assert_eq!(
        speed.len(),
        t_len,
        "speed curve length must match series length"
    );
    let tau = warped_time(speed);
    let source: Vec<f64> = (0..t_len)
        .map(|t| {
            let target = t as f64;
            let k = tau
                .partition_point(|&v| v <= target)
                .saturating_sub(1)
                .min(t_len - 2);
            k as f64 + (target - tau[k]) / (tau[k + 1] - tau[k])
        })
        .collect();
    let mut out = Array2::zeros(x.dim());
    for (c, row) in x.rows().into_iter().enumerate() {
        let row = row.to_vec();
        for (t, &u) in source.iter().enumerate() {
            out[[c, t]] = interp_at(&row, u);
        }
    }
    out
}

/// Window length used by window warping for a series of length `t`.
pub fn window_len(t: usize, ratio: f64) -> usize {
    ((ratio * t as f64).round() as usize).max(2)
}

/// Stretches or compresses a random window by a randomly chosen scale and
/// resamples the result back to the original length.
pub fn window_warp(
    x: &Array2<f64>,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<Array2<f64>> {
    count_invocation();
    let t = x.ncols();
    let w = window_len(t, cfg.ww_ratio);
    if w > t {
        return Err(Error::Config(format!(
            "window length {w} exceeds series length {t}"
        )));
    }
    let start = rng.int_inclusive(0, t - w);
    let scale = cfg.ww_scales[rng.int_inclusive(0, cfg.ww_scales.len() - 1)];
    Ok(warp_window(x, start, w, scale))
}

/// Deterministic part of [`window_warp`]: resample `x[.., start..start + width]`
/// to `round(scale * width)` samples, splice it back, then resample the
/// spliced sequence to the original length.
pub fn warp_window(x: &Array2<f64>, start: usize, width: usize, scale: f64) -> Array2<f64> {
    let t = x.ncols();
    assert!(width >= 2 && start + width <= t, "window out of range");
    let new_w = ((scale * width as f64).round() as usize).max(2);
    let mut out = Array2::zeros(x.dim());
    for (c, row) in x.axis_iter(Axis(0)).enumerate() {
        let row = row.to_vec();
        let warped = resample_linear(&row[start..start + width], new_w);
        let mut spliced = Vec::with_capacity(t - width + new_w);
        spliced.extend_from_slice(&row[..start]);
        spliced.extend_from_slice(&warped);
        spliced.extend_from_slice(&row[start + width..]);
        for (i, v) in resample_linear(&spliced, t).into_iter().enumerate() {
            out[[c, i]] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ramp(c: usize, t: usize) -> Array2<f64> {
        Array2::from_shape_fn((c, t), |(i, j)| (j as f64) * 0.1 - i as f64)
    }

    #[test]
    fn default_config_is_valid() {
        AugmentConfig::default().validate().unwrap();
        let mut c = AugmentConfig::default();
        c.ww_ratio = 1.0;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.mw_knots = 1;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.ww_scales.clear();
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.jitter_sigma = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("Window-Warp".parse::<Method>().unwrap(), Method::WindowWarp);
        assert!("rotate".parse::<Method>().is_err());
    }

    #[test]
    fn zero_sigma_curve_is_constant() {
        let mut rng = RngStream::new(1);
        let c = random_smooth_curve(17, 4, 0.7, 0.0, &mut rng);
        assert!(c.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn jitter_zero_sigma_is_identity() {
        let x = ramp(2, 9);
        assert_eq!(jitter(&x, 0.0, &mut RngStream::new(3)), x);
    }

    #[test]
    fn magnitude_warp_zero_input_stays_zero() {
        let x = Array2::zeros((1, 12));
        let y = magnitude_warp(&x, &AugmentConfig::default(), &mut RngStream::new(5)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn magnitude_warp_equals_product_with_curve() {
        let cfg = AugmentConfig::default();
        let x = ramp(1, 8);
        let y = magnitude_warp(&x, &cfg, &mut RngStream::new(11)).unwrap();
        let curve = random_smooth_curve(8, 4, cfg.mw_mean, cfg.mw_sigma, &mut RngStream::new(11));
        for t in 0..8 {
            assert_eq!(y[[0, t]], x[[0, t]] * curve[t]);
        }
    }

    #[test]
    fn time_warp_keeps_monotone_input_in_range() {
        let cfg = AugmentConfig {
            tw_sigma: 0.8,
            ..Default::default()
        };
        let x = ramp(1, 40);
        for seed in 0..20 {
            let y = time_warp(&x, &cfg, &mut RngStream::new(seed)).unwrap();
            for v in y.iter() {
                assert!(*v >= x[[0, 0]] - 1e-12 && *v <= x[[0, 39]] + 1e-12);
            }
            assert_eq!(y[[0, 0]], x[[0, 0]]);
            assert_eq!(y[[0, 39]], x[[0, 39]]);
        }
    }

    #[test]
    fn warped_time_clamps_negative_speed() {
        let tau = warped_time(&[1.0, -3.0, 1.0, 1.0]);
        for w in tau.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_eq!(tau[0], 0.0);
        assert_eq!(tau[3], 3.0);
    }

    #[test]
    fn window_warp_scale_one_is_identity() {
        let x = array![[0.3, -0.2, 0.9, 1.4, 0.0, -0.7, 0.25, 0.5, 0.1, 0.6]];
        for start in 0..=8 {
            let y = warp_window(&x, start, 2, 1.0);
            for (a, b) in x.iter().zip(y.iter()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn window_warp_constant_input() {
        let x = Array2::from_elem((2, 30), 0.42);
        let y = window_warp(&x, &AugmentConfig::default(), &mut RngStream::new(9)).unwrap();
        assert!(y.iter().all(|&v| (v - 0.42).abs() < 1e-15));
    }

    #[test]
    fn window_warp_hand_case() {
        // ramp 0..19, window [5, 7) stretched x2: the window (5, 6) becomes
        // (5, 16/3, 17/3, 6) and the spliced sequence has 22 samples.
        let x = Array2::from_shape_fn((1, 20), |(_, j)| j as f64);
        let y = warp_window(&x, 5, 2, 2.0);
        let spliced = [
            0.0,
            1.0,
            2.0,
            3.0,
            4.0,
            5.0,
            16.0 / 3.0,
            17.0 / 3.0,
            6.0,
            7.0,
            8.0,
            9.0,
            10.0,
            11.0,
            12.0,
            13.0,
            14.0,
            15.0,
            16.0,
            17.0,
            18.0,
            19.0,
        ];
        for i in 0..20 {
            let pos = i as f64 * 21.0 / 19.0;
            let lo = pos.floor() as usize;
            let want = if lo >= 21 {
                spliced[21]
            } else {
                spliced[lo] + (pos - lo as f64) * (spliced[lo + 1] - spliced[lo])
            };
            assert!(
                (y[[0, i]] - want).abs() < 1e-12,
                "i={i}: {} vs {want}",
                y[[0, i]]
            );
        }
    }

    #[test]
    fn apply_all_order_and_identity_slot() {
        let x = TimeSeries::new(ramp(2, 24), 1).unwrap();
        let b = apply_all(&x, &AugmentConfig::default(), &mut RngStream::new(2)).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.views[0], *x.values());
        assert_eq!(b.source_label, 1);
        for v in &b.views {
            assert_eq!(v.dim(), (2, 24));
        }
        let b2 = apply_all(&x, &AugmentConfig::default(), &mut RngStream::new(2)).unwrap();
        assert_eq!(b, b2);
    }

    #[test]
    fn invocations_are_counted() {
        let before = invocation_count();
        let x = ramp(1, 10);
        jitter(&x, 0.1, &mut RngStream::new(0));
        assert_eq!(invocation_count(), before + 1);
    }
}
