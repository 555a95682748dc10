//! Least-squares fits used by the decay-rate property checks.

/// Result of an ordinary least-squares line fit.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `y = intercept + slope * x` to the points.
pub fn linear_fit(points: &[(f64, f64)]) -> LineFit {
    let n = points.len() as f64;
    assert!(points.len() >= 2, "line fit needs at least two points");
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LineFit { slope, intercept, r2 }
}

/// Fits `log(y) = intercept + slope * x`; points with `y <= 0` are dropped.
/// Returns `None` when fewer than two positive points remain.
pub fn log_linear_fit(points: &[(f64, f64)]) -> Option<LineFit> {
    let logged: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|p| (p.0, p.1.ln())).collect();
    if logged.len() < 2 {
        return None;
    }
    Some(linear_fit(&logged))
}

/// Fits `log(y) = intercept + slope * log(x)`.
pub fn log_log_fit(points: &[(f64, f64)]) -> Option<LineFit> {
    let logged: Vec<(f64, f64)> =
        points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if logged.len() < 2 {
        return None;
    }
    Some(linear_fit(&logged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        let f = linear_fit(&pts);
        assert_relative_eq!(f.slope, -0.5, max_relative = 1e-12);
        assert_relative_eq!(f.intercept, 3.0, max_relative = 1e-12);
        assert_relative_eq!(f.r2, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn log_fit_recovers_decay_rate() {
        let pts: Vec<(f64, f64)> = (1..12).map(|i| (i as f64, 7.0 * (-0.8 * i as f64).exp())).collect();
        let f = log_linear_fit(&pts).unwrap();
        assert_relative_eq!(f.slope, -0.8, max_relative = 1e-10);
        assert_relative_eq!(f.intercept.exp(), 7.0, max_relative = 1e-10);
    }

    #[test]
    fn log_log_fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = (1..20).map(|i| (i as f64, 2.0 / i as f64)).collect();
        let f = log_log_fit(&pts).unwrap();
        assert_relative_eq!(f.slope, -1.0, max_relative = 1e-10);
    }
}
