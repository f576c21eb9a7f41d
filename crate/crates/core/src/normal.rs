//! Standard normal density and distribution function.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `ln(2π) / 2`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal probability density φ(t).
pub fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function Φ(t).
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(t), evaluated without cancellation.
pub fn std_normal_sf(t: f64) -> f64 {
    0.5 * erfc(t * FRAC_1_SQRT_2)
}

/// Φ(hi) − Φ(lo) for lo ≤ hi, using whichever tail keeps precision.
pub fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        std_normal_sf(lo) - std_normal_sf(hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_pdf(0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
        // Tabulated to 16 digits.
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((std_normal_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-12);
        assert!((std_normal_cdf(1.96) - 0.975_002_104_851_779_6).abs() < 1e-12);
        assert!((std_normal_sf(8.0) - 6.220_960_574_271_784e-16).abs() < 1e-26);
        assert!((HALF_LN_2PI - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn symmetry() {
        for i in -800..=800 {
            let t = i as f64 / 100.0;
            assert!((std_normal_cdf(-t) - (1.0 - std_normal_cdf(t))).abs() < 1e-14, "t={t}");
            assert_eq!(std_normal_pdf(t), std_normal_pdf(-t));
        }
    }

    #[test]
    fn mass_matches_difference() {
        for &(a, b) in &[(-1.0, 2.0), (0.5, 0.7), (3.0, 9.0), (-9.0, -3.0)] {
            let direct = std_normal_cdf(b) - std_normal_cdf(a);
            assert!((std_normal_mass(a, b) - direct).abs() < 1e-15);
        }
        // Deep upper tail keeps relative precision.
        let m = std_normal_mass(9.0, 10.0);
        assert!(m > 0.0 && (m - (std_normal_sf(9.0) - std_normal_sf(10.0))).abs() < 1e-30);
    }
}
