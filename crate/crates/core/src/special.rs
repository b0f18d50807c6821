//! Orthogonal polynomials and the complex complementary error function.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{KqseError, Result};

/// Highest polynomial order accepted by [`hermite`] and [`laguerre`].
pub const MAX_ORDER: u32 = 60;

fn check_order(m: u32) -> Result<()> {
    if m > MAX_ORDER {
        return Err(KqseError::UnsupportedOrder { order: m, max: MAX_ORDER });
    }
    Ok(())
}

/// Physicists' Hermite polynomial `H_m(y)`.
pub fn hermite(m: u32, y: f64) -> Result<f64> {
    check_order(m)?;
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..m {
        let next = 2.0 * y * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Laguerre polynomial `L_m(x)`.
pub fn laguerre(m: u32, x: f64) -> Result<f64> {
    check_order(m)?;
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..m {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 - x) * cur - k * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// `H_m(y) / sqrt(2^m m!)`, evaluated with a scaled recurrence that never
/// forms the factorial.
pub(crate) fn hermite_scaled(m: u32, y: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..m {
        let k = k as f64;
        let next = (2.0 / (k + 1.0)).sqrt() * y * cur - (k / (k + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Complementary error function of a complex argument.
///
/// Power series for `|Re z| < 2` (the cancellation there is bounded by
/// `e^{2 Re(z)^2}`), Laplace continued fraction in the right half plane
/// beyond that, and reflection `erfc(-z) = 2 - erfc(z)` on the left.
pub fn erfc(z: Complex64) -> Complex64 {
    if z.re.abs() < 2.0 {
        Complex64::new(1.0, 0.0) - erf_series(z)
    } else if z.re > 0.0 {
        erfc_continued_fraction(z)
    } else {
        Complex64::new(2.0, 0.0) - erfc_continued_fraction(-z)
    }
}

/// Real complementary error function.
pub fn erfc_real(x: f64) -> f64 {
    erfc(Complex64::new(x, 0.0)).re
}

fn erf_series(z: Complex64) -> Complex64 {
    // erf z = 2/sqrt(pi) * sum_n (-1)^n z^{2n+1} / (n! (2n+1))
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -z2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.norm() <= 1e-17 * sum.norm() || n > 2000.0 {
            break;
        }
    }
    sum * FRAC_2_SQRT_PI
}

fn erfc_continued_fraction(z: Complex64) -> Complex64 {
    // erfc z = e^{-z^2}/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
    // evaluated with the modified Lentz algorithm.
    let tiny = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = Complex64::new(0.0, 0.0);
    for k in 1..5000 {
        let a = k as f64 * 0.5;
        d = z + a * d;
        if d.norm() < tiny {
            d = Complex64::new(tiny, 0.0);
        }
        c = z + a / c;
        if c.norm() < tiny {
            c = Complex64::new(tiny, 0.0);
        }
        d = d.inv();
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).norm() < 1e-16 {
            break;
        }
    }
    (-z * z).exp() / (f * PI.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite(0, 3.7).unwrap(), 1.0);
        assert_eq!(hermite(1, 0.0).unwrap(), 0.0);
        assert!((hermite(3, 1.5).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn laguerre_low_orders() {
        assert_eq!(laguerre(0, 2.2).unwrap(), 1.0);
        assert!((laguerre(1, 2.0).unwrap() + 1.0).abs() < 1e-15);
        assert!((laguerre(2, 1.0).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn order_cap() {
        assert!(hermite(60, 1.0).is_ok());
        assert!(matches!(hermite(61, 1.0), Err(KqseError::UnsupportedOrder { .. })));
        assert!(matches!(laguerre(61, 1.0), Err(KqseError::UnsupportedOrder { .. })));
    }

    #[test]
    fn scaled_hermite_matches_raw() {
        let mut fact = 1.0;
        for m in 0..20u32 {
            if m > 0 {
                fact *= m as f64;
            }
            let y = 0.37 * m as f64 - 1.1;
            let raw = hermite(m, y).unwrap() / (2f64.powi(m as i32) * fact).sqrt();
            assert!((raw - hermite_scaled(m, y)).abs() < 1e-10 * (1.0 + raw.abs()));
        }
    }

    #[test]
    fn erfc_basic_values() {
        assert!((erfc(Complex64::new(0.0, 0.0)) - 1.0).norm() < 1e-16);
        assert!((erfc_real(1.0) - 0.157_299_207_050_285_13).abs() < 1e-15);
        assert!((erfc_real(-1.0) - 1.842_700_792_949_714_9).abs() < 1e-15);
    }
}
