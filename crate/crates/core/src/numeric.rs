//! Small numerical helpers shared by the physics modules.

/// Trapezoidal integral of uniformly spaced samples.
pub(crate) fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            step * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Standard normal CDF.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Width of the contiguous region around the global maximum where the samples
/// stay at or above half the maximum. Crossings are linearly interpolated.
/// Returns the width in index units.
pub(crate) fn half_max_width_samples(values: &[f64]) -> Option<f64> {
    let (peak, &max) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(max > 0.0) {
        return None;
    }
    let half = 0.5 * max;
    let mut left = 0.0;
    for i in (0..peak).rev() {
        if values[i] < half {
            let (lo, hi) = (values[i], values[i + 1]);
            left = i as f64 + (half - lo) / (hi - lo);
            break;
        }
    }
    let mut right = (values.len() - 1) as f64;
    for i in peak + 1..values.len() {
        if values[i] < half {
            let (hi, lo) = (values[i - 1], values[i]);
            right = (i - 1) as f64 + (hi - half) / (hi - lo);
            break;
        }
    }
    Some(right - left)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let v: Vec<f64> = (0..11).map(|i| 2.0 * i as f64 * 0.1).collect();
        assert!((trapezoid(&v, 0.1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_max_of_triangle() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        assert!((half_max_width_samples(&v).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) + normal_cdf(-1.0) - 1.0).abs() < 1e-15);
    }
}
