//! Central finite differences.

/// Central difference of `f` along coordinate `i` of `x` with step
/// `h = rel_step * max(1, |x_i|)`.
pub fn central_difference<F>(x: &[f64], i: usize, rel_step: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let h = rel_step * x[i].abs().max(1.0);
    let mut xp = x.to_vec();
    xp[i] += h;
    let mut xm = x.to_vec();
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Full central-difference gradient.
pub fn gradient<F>(x: &[f64], rel_step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    (0..x.len())
        .map(|i| central_difference(x, i, rel_step, &mut f))
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
