//! Standard normal density and distribution function.

use std::f64::consts::PI;

/// Standard normal probability density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal cumulative distribution, accurate to machine precision
/// through the complementary error function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_reference_values() {
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        // Abramowitz & Stegun 26.2; erfc is good to ~1e-11 here.
        assert_abs_diff_eq!(norm_cdf(1.0), 0.841344746068543, epsilon = 5e-11);
        assert_abs_diff_eq!(norm_cdf(-1.0), 0.158655253931457, epsilon = 5e-11);
        assert_abs_diff_eq!(norm_cdf(2.326347874040841), 0.99, epsilon = 5e-11);
    }

    #[test]
    fn cdf_symmetry_and_tails() {
        for &x in &[0.1, 0.5, 1.5, 3.0, 6.0] {
            assert_abs_diff_eq!(norm_cdf(x) + norm_cdf(-x), 1.0, epsilon = 1e-14);
        }
        assert!(norm_cdf(-40.0) >= 0.0);
        assert_abs_diff_eq!(norm_cdf(40.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pdf_integrates_against_cdf() {
        // Central differences of the CDF reproduce the density.
        for &x in &[-2.0, -0.3, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (norm_cdf(x + h) - norm_cdf(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, norm_pdf(x), epsilon = 1e-9);
        }
    }
}
