//! Scalar special functions shared by the tape ops, the entropy models and
//! the coder.

use core::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

/// Smallest probability mass any entropy model reports: 2⁻³².
pub const MASS_FLOOR: f64 = 1.0 / 4_294_967_296.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub fn std_normal_pdf(t: f64) -> f64 {
    libm::exp(-0.5 * t * t) / libm::sqrt(2.0 * PI)
}

#[inline]
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

#[inline]
pub fn gaussian_cdf(x: f64, loc: f64, scale: f64) -> f64 {
    std_normal_cdf((x - loc) / scale)
}

/// Mass of `N(loc, scale²)` on `[y − ½, y + ½]` and its partial derivatives
/// with respect to `(y, loc, scale)`.
///
/// Evaluated on the lower tail by symmetry so both CDF terms stay small and
/// the difference keeps its relative precision far from the mode.
#[derive(Debug, Clone, Copy)]
pub struct IntervalMass {
    pub mass: f64,
    pub d_y: f64,
    pub d_loc: f64,
    pub d_scale: f64,
}

pub fn gaussian_interval_mass(y: f64, loc: f64, scale: f64) -> IntervalMass {
    let diff = y - loc;
    let v = libm::fabs(diff);
    let upper = (0.5 - v) / scale;
    let lower = (-0.5 - v) / scale;
    let mass = std_normal_cdf(upper) - std_normal_cdf(lower);
    let (pu, pl) = (std_normal_pdf(upper), std_normal_pdf(lower));
    let d_v = (pl - pu) / scale;
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    IntervalMass {
        mass,
        d_y: sign * d_v,
        d_loc: -sign * d_v,
        d_scale: (lower * pl - upper * pu) / scale,
    }
}

/// Entropy of `N(·, variance)` in bits.
#[inline]
pub fn gaussian_entropy_bits(variance: f64) -> f64 {
    0.5 * libm::log2(2.0 * PI * core::f64::consts::E * variance)
}

#[inline]
pub fn log2_floored(mass: f64) -> f64 {
    libm::log(mass.max(MASS_FLOOR)) / LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_interval_mass_at_zero() {
        // 2Φ(½) − 1 = erf(1/(2√2)).
        let m = gaussian_interval_mass(0.0, 0.0, 1.0).mass;
        assert!((m - libm::erf(0.5 * FRAC_1_SQRT_2)).abs() < 1e-15);
        assert!((m - 0.382_924_922_548_026).abs() < 1e-12);
    }

    #[test]
    fn interval_mass_matches_quadrature() {
        // Simpson quadrature of the Gaussian density over the bin.
        for &(y, loc, s) in &[(0.0, 0.3, 0.7), (3.0, -1.2, 2.5), (-2.0, 0.1, 0.4), (7.0, 0.0, 1.0)] {
            let n = 2000;
            let h = 1.0 / n as f64;
            let f = |x: f64| std_normal_pdf((x - loc) / s) / s;
            let mut acc = f(y - 0.5) + f(y + 0.5);
            for i in 1..n {
                let x = y - 0.5 + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
            }
            let quad = acc * h / 3.0;
            let m = gaussian_interval_mass(y, loc, s).mass;
            assert!((m - quad).abs() < 1e-9, "{y} {loc} {s}: {m} vs {quad}");
        }
    }

    #[test]
    fn interval_mass_derivatives_match_finite_differences() {
        let (y, loc, s) = (1.0, 0.35, 0.8);
        let h = 1e-6;
        let m = |y: f64, l: f64, s: f64| gaussian_interval_mass(y, l, s).mass;
        let g = gaussian_interval_mass(y, loc, s);
        assert!((g.d_y - (m(y + h, loc, s) - m(y - h, loc, s)) / (2.0 * h)).abs() < 1e-8);
        assert!((g.d_loc - (m(y, loc + h, s) - m(y, loc - h, s)) / (2.0 * h)).abs() < 1e-8);
        assert!((g.d_scale - (m(y, loc, s + h) - m(y, loc, s - h)) / (2.0 * h)).abs() < 1e-8);
    }

    #[test]
    fn entropy_of_unit_entropy_variance_is_zero() {
        let v = 1.0 / (2.0 * PI * core::f64::consts::E);
        assert!(gaussian_entropy_bits(v).abs() < 1e-12);
        assert!((gaussian_entropy_bits(2.0 * v) - 0.5).abs() < 1e-12);
    }
}
