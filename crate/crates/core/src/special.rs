//! Special functions used by the optics and likelihood code.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Bessel function of the first kind, order one.
#[inline]
pub fn bessel_j1(x: f64) -> f64 {
    libm::j1(x)
}

const LN_FACTORIAL_TABLE: usize = 1 << 16;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..LN_FACTORIAL_TABLE)
            .map(|k| libm::lgamma(k as f64 + 1.0))
            .collect()
    })
}

/// ln(k!) for a non-negative integer k.
#[inline]
pub fn ln_factorial(k: u64) -> f64 {
    if (k as usize) < LN_FACTORIAL_TABLE {
        ln_factorial_table()[k as usize]
    } else {
        libm::lgamma(k as f64 + 1.0)
    }
}

/// Natural log of the Poisson pmf. `ln_poisson(0, 0) = 0` and any positive
/// count under a zero rate is impossible.
#[inline]
pub fn ln_poisson(k: u64, rate: f64) -> f64 {
    if rate <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * rate.ln() - rate - ln_factorial(k)
}

/// Smallest variance the Normal log-density will use.
pub const MIN_VARIANCE: f64 = 1e-12;

#[inline]
pub fn ln_normal(x: f64, mean: f64, variance: f64) -> f64 {
    let var = variance.max(MIN_VARIANCE);
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

/// Natural log without branches or calls, so loops over it vectorize.
/// Agrees with `f64::ln` to a few ulp for positive finite input, including
/// subnormals; zero gives -inf. Negative, infinite and NaN input are not
/// supported.
#[inline(always)]
pub fn fast_ln(x: f64) -> f64 {
    const LN2: f64 = std::f64::consts::LN_2;
    // Lift subnormals into the normal range.
    let tiny = x < f64::MIN_POSITIVE;
    let xs = if tiny { x * TWO_POW_60 } else { x };
    let bits = xs.to_bits();
    // Biased exponent as a float via the 2^52 magic constant.
    let e = f64::from_bits((bits >> 52) | 0x4330_0000_0000_0000) - 4_503_599_627_371_519.0;
    let m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    let big = m > std::f64::consts::SQRT_2;
    let m = if big { 0.5 * m } else { m };
    let e = if big { e + 1.0 } else { e };
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    // 2 atanh(s) = 2 (s + s^3/3 + s^5/5 + ...), |s| <= 0.1716
    let mut p = 1.0 / 21.0;
    p = p * s2 + 1.0 / 19.0;
    p = p * s2 + 1.0 / 17.0;
    p = p * s2 + 1.0 / 15.0;
    p = p * s2 + 1.0 / 13.0;
    p = p * s2 + 1.0 / 11.0;
    p = p * s2 + 1.0 / 9.0;
    p = p * s2 + 1.0 / 7.0;
    p = p * s2 + 1.0 / 5.0;
    p = p * s2 + 1.0 / 3.0;
    let ln_m = 2.0 * s + 2.0 * s * s2 * p;
    let shift = if tiny { -60.0 } else { 0.0 };
    let r = (e + shift) * LN2 + ln_m;
    if x == 0.0 {
        f64::NEG_INFINITY
    } else {
        r
    }
}

const TWO_POW_60: f64 = 1_152_921_504_606_846_976.0;

/// ln(sum(exp(values))) without overflow. Returns -inf for an empty or
/// all-impossible input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn fast_ln_tracks_std_ln() {
        let mut x: f64 = 1e-310;
        while x < 1e300 {
            for f in [1.0, 1.0000001, 1.41421356, 1.41421357, 1.7, 2.3, 9.99] {
                let v = x * f;
                let want = v.ln();
                let got = fast_ln(v);
                assert!(
                    (got - want).abs() <= 4.0 * f64::EPSILON * want.abs().max(1.0),
                    "{v}: {got} vs {want}"
                );
            }
            x *= 10.0;
        }
        for v in [1.0 - 1e-12, 1.0 + 1e-12, 0.9999, 1.0001] {
            let want = f64::ln(v);
            assert!(((fast_ln(v) - want) / want).abs() < 1e-12);
        }
        assert_eq!(fast_ln(1.0), 0.0);
        assert_eq!(fast_ln(0.0), f64::NEG_INFINITY);
    }

    // Reference values from an independent double-precision implementation.
    const J1_REFERENCE: [(f64, f64); 12] = [
        (0.5, 0.24226845767487387),
        (1.0, 0.44005058574493355),
        (2.5, 0.497094102464274),
        (5.0, -0.3275791375914653),
        (7.9, 0.21917939992175126),
        (8.0, 0.2346363468539146),
        (10.0, 0.04347274616886141),
        (12.0, -0.2234471044906276),
        (15.0, 0.20510403861352278),
        (20.0, 0.0668331241758502),
        (50.0, -0.09751182812517509),
        (100.0, -0.0771453520141123),
    ];

    #[test]
    fn j1_matches_reference_values() {
        for (x, expected) in J1_REFERENCE {
            let got = bessel_j1(x);
            assert!(
                (got - expected).abs() < 1e-12,
                "J1({x}) = {got}, expected {expected}"
            );
            assert!((bessel_j1(-x) + expected).abs() < 1e-12);
        }
        assert_eq!(bessel_j1(0.0), 0.0);
    }

    #[test]
    fn j1_first_zero() {
        let root = 3.8317059702075107;
        assert!(bessel_j1(root).abs() < 1e-13);
        assert!(bessel_j1(root - 1e-3) > 0.0 && bessel_j1(root + 1e-3) < 0.0);
    }

    #[test]
    fn j1_is_odd() {
        for x in [0.3, 4.2, 17.0] {
            assert_eq!(bessel_j1(-x), -bessel_j1(x));
        }
    }

    #[test]
    fn poisson_conventions() {
        assert_eq!(ln_poisson(0, 0.0), 0.0);
        assert_eq!(ln_poisson(5, 0.0), f64::NEG_INFINITY);
        let expected = 2.0 * 2f64.ln() - 2.0 - 2f64.ln();
        assert!((ln_poisson(2, 2.0) - expected).abs() < 1e-14);
        assert!((ln_factorial(70_000) - libm::lgamma(70_001.0)).abs() < 1e-9);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
