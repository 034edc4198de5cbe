//! Standard normal distribution function, survival function, and quantile.
//!
//! Built on the complementary error function from `libm` (sub-ulp accurate),
//! so `cdf` is reliable deep into both tails. The quantile uses a rational
//! initial guess polished by Newton steps against our own `cdf`, giving
//! absolute accuracy well beyond 1e-12 everywhere; this matters because the
//! quantile feeds closed-form formulas whose tolerances are near 1e-10.

use std::f64::consts::SQRT_2;

const SQRT_2PI: f64 = 2.5066282746310002;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-x * x / 2.0).exp() / SQRT_2PI
}

/// `P[Z <= x]` for standard normal `Z`.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Survival function `P[Z > x]`, accurate for large positive `x`.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Inverse of [`cdf`]. Returns -inf at 0, +inf at 1, NaN outside [0, 1].
pub fn inv_cdf(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = acklam_guess(p);
    // Two Newton polishes; with a ~1e-9 guess the first lands near machine
    // precision, the second mops up tail cases where pdf is tiny. Halley's
    // correction factor guards the extreme tails.
    for _ in 0..2 {
        let err = cdf(x) - p;
        let d = pdf(x);
        if d == 0.0 {
            break;
        }
        let step = err / d;
        x -= step / (1.0 + x * step / 2.0);
    }
    x
}

/// Acklam's rational approximation to the normal quantile (~1e-9 relative).
fn acklam_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        // High-precision values for spot checks at the center, a typical
        // quantile, and a deep tail.
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((cdf(-5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
        assert!((sf(5.0) - 2.866_515_718_791_939e-7).abs() < 1e-20);
        assert!((sf(8.0) - 6.220_960_574_271_786e-16).abs() < 1e-28);
    }

    #[test]
    fn quantile_round_trip() {
        let mut p = 1e-10;
        while p < 1.0 {
            let x = inv_cdf(p);
            let back = cdf(x);
            assert!(
                (back - p).abs() < 1e-14 * p.max(1e-3),
                "p={p}: cdf(inv_cdf(p))={back}"
            );
            p *= 1.37;
        }
        assert!((inv_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((inv_cdf(0.5)).abs() < 1e-15);
    }

    #[test]
    fn quantile_edges() {
        assert_eq!(inv_cdf(0.0), f64::NEG_INFINITY);
        assert_eq!(inv_cdf(1.0), f64::INFINITY);
        assert!(inv_cdf(-0.1).is_nan());
        assert!(inv_cdf(1.1).is_nan());
    }

    #[test]
    fn symmetry() {
        for x in [0.3, 1.7, 4.2] {
            assert!((cdf(x) + cdf(-x) - 1.0).abs() < 1e-15);
            assert!((sf(x) - cdf(-x)).abs() < 1e-18);
        }
    }
}
