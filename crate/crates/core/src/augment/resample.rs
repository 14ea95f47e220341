/// Linear interpolation of `v` at fractional index `pos`, clamped to the ends.
#[inline]
pub fn interp_at(v: &[f64], pos: f64) -> f64 {
    let last = v.len() - 1;
    if pos <= 0.0 {
        return v[0];
    }
    let lo = pos.floor() as usize;
    if lo >= last {
        return v[last];
    }
    let frac = pos - lo as f64;
    v[lo] + frac * (v[lo + 1] - v[lo])
}

/// Resamples `v` to `new_len` points: `out[i] = v(i * (L - 1) / (new_len - 1))`.
/// Endpoints are preserved exactly.
pub fn resample_linear(v: &[f64], new_len: usize) -> Vec<f64> {
    assert!(
        v.len() >= 2,
        "resample_linear needs at least 2 input samples"
    );
    assert!(new_len >= 2, "resample_linear needs new_len >= 2");
    let scale = (v.len() - 1) as f64;
    let denom = (new_len - 1) as f64;
    (0..new_len)
        .map(|i| {
            if i == new_len - 1 {
                v[v.len() - 1]
            } else {
                interp_at(v, i as f64 * scale / denom)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_length_is_identity() {
        let v = [0.3, -1.2, 5.0, 2.2, 0.0];
        assert_eq!(resample_linear(&v, 5), v.to_vec());
    }

    #[test]
    fn midpoint() {
        assert_eq!(resample_linear(&[0.0, 1.0], 3), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn ramp_stays_ramp() {
        let out = resample_linear(&[0.0, 2.0, 4.0, 6.0], 7);
        assert_eq!(out, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn downsample_keeps_endpoints() {
        let v: Vec<f64> = (0..11).map(|i| (i as f64).sin()).collect();
        let out = resample_linear(&v, 4);
        assert_eq!(out[0], v[0]);
        assert_eq!(out[3], v[10]);
    }
}
