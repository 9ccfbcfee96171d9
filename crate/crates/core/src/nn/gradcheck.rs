//! Central finite differences, the reference for every analytic gradient.

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_differences(f: &dyn Fn(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let plus = f(&x);
            x[i] = orig - h;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - n| / max(|a|, |n|)`, skipping entries where both
/// magnitudes are below `floor`. Also returns how many entries were compared.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale < floor {
            continue;
        }
        checked += 1;
        worst = worst.max((a - n).abs() / scale);
    }
    (worst, checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let g = central_differences(&f, &[2.0, 5.0], 1e-5);
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_skips_tiny() {
        let (err, n) = max_relative_error(&[1.0, 1e-10], &[1.0001, 3e-10], 1e-8);
        assert_eq!(n, 1);
        assert!((err - 1e-4 / 1.0001).abs() < 1e-12);
    }
}
