//! Small least-squares helpers shared by the rate fits.

/// Ordinary least squares for y = a + b x. Returns (a, b, r2).
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let b = (n * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - a - b * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (a, b, r2)
}

/// Least squares for y = b x (no intercept). Returns (b, r2).
pub fn line_fit_through_origin(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let b = sxy / sxx;
    let mean_y: f64 = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - b * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (b, r2)
}

/// Checks that `series` decreases monotonically over its last `window`
/// entries, tolerating up to `allowed_violations` increases.
pub fn monotone_decreasing_trend(series: &[f64], window: usize, allowed_violations: usize) -> bool {
    let tail: Vec<f64> = series
        .iter()
        .rev()
        .take(window)
        .rev()
        .copied()
        .collect();
    if tail.len() < 2 {
        return true;
    }
    let violations = tail.windows(2).filter(|w| w[1] > w[0]).count();
    violations <= allowed_violations
}
