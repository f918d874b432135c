//! Central finite differences for validating recorded gradients.

/// Central difference approximation of df/dx at `x`.
pub fn central_diff<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central difference gradient of a multivariate function.
pub fn grad_fd<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// Central difference of f along direction `dir` at `x`.
pub fn directional_diff<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    dir: &[f64],
    h: f64,
) -> f64 {
    assert_eq!(x.len(), dir.len());
    let shifted = |s: f64| -> Vec<f64> {
        x.iter()
            .zip(dir)
            .map(|(&xi, &di)| xi + s * di)
            .collect()
    };
    let xp = shifted(h);
    let xm = shifted(-h);
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error with an absolute floor:
/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest componentwise [`rel_err`] between two gradients.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y, floor))
        .fold(0.0, f64::max)
}
