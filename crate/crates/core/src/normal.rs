//! Standard normal density, distribution, and tail helpers.

use std::f64::consts::FRAC_1_SQRT_2;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)`, accurate far into the right tail.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `ln cdf(x)` without underflow to `-inf` before it matters and without
/// losing the small complement when `cdf(x)` is near one.
#[inline]
pub fn ln_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-sf(x)).ln_1p()
    } else {
        cdf(x).ln()
    }
}

/// Standardized stop-loss `E[(Z - z)^+] = pdf(z) - z * sf(z)` for `Z ~ N(0, 1)`.
///
/// Positive and decreasing. The direct form cancels for large `z`, but its
/// absolute error stays near `1e-16 * pdf(z)`.
#[inline]
pub fn stop_loss(z: f64) -> f64 {
    (pdf(z) - z * sf(z)).max(0.0)
}

/// Upper bound on `stop_loss(z)` for `z >= 0` that never cancels.
#[inline]
pub fn stop_loss_bound(z: f64) -> f64 {
    if z > 1.0 {
        pdf(z) / (z * z)
    } else {
        stop_loss(z)
    }
}

/// `E|Z| = sqrt(2/pi)` for a standard normal.
pub const MEAN_ABS: f64 = 0.797_884_560_802_865_4;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn known_values() {
        assert!((pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((sf(10.0) - 7.619_853_024_160_527e-24).abs() < 1e-36);
        assert!((MEAN_ABS - (2.0 / PI).sqrt()).abs() < 1e-16);
    }

    #[test]
    fn ln_cdf_is_continuous_and_precise() {
        assert!((ln_cdf(1e-12) - cdf(1e-12).ln()).abs() < 1e-15);
        // ln(1 - 7.6e-24) is representable only through ln_1p.
        assert!(ln_cdf(10.0) < 0.0);
        assert!((ln_cdf(-5.0) - cdf(-5.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn stop_loss_matches_integral_at_zero() {
        assert!((stop_loss(0.0) - pdf(0.0)).abs() < 1e-16);
        for z in [0.5, 1.5, 3.0, 6.0] {
            assert!(stop_loss(z) <= stop_loss_bound(z) * (1.0 + 1e-12));
        }
    }
}
