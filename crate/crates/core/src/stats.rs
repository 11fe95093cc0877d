//! Small descriptive statistics.

use crate::math;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n−1); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    math::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0))
}

/// Pearson correlation; NaN when either side is constant or lengths differ.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() != ys.len() || xs.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / math::sqrt(sxx * syy)
}

/// R² of the ordinary least-squares line of `ys` on `xs`.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let r = pearson(xs, ys);
    r * r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(sample_sd(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(sample_sd(&[5.0]), 0.0);
    }

    #[test]
    fn r_squared_perfect_and_antipodal() {
        let x = [0.1, 0.5, 0.2, 0.9];
        assert!((r_squared(&x, &x) - 1.0).abs() < 1e-15);
        let neg: [f64; 4] = core::array::from_fn(|i| -x[i]);
        assert!((pearson(&x, &neg) + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_nan());
    }

    #[test]
    fn r_squared_matches_ols_residuals() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.1, 3.9, 6.2, 7.8, 10.1];
        let (mx, my) = (mean(&x), mean(&y));
        let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
            / x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
        let icpt = my - slope * mx;
        let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        assert!((r_squared(&x, &y) - (1.0 - ss_res / ss_tot)).abs() < 1e-12);
    }
}
