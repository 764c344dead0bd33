//! Log-space binomial coefficients with real upper argument.
//!
//! `ln C(n, k)` is assembled from Stirling-error corrections rather than as a
//! difference of three `ln Gamma` values, so the result keeps full relative
//! precision even when the individual log-factorials are large.

use crate::error::{invalid, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the Stirling error is taken from `lgamma` directly.
const STIRLING_SERIES_MIN: f64 = 15.0;

/// `ln Gamma(x + 1) - [(x + 1/2) ln x - x + ln sqrt(2 pi)]` for `x > 0`.
pub(crate) fn stirling_error(x: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;

    if x <= STIRLING_SERIES_MIN {
        return libm::lgamma(x + 1.0) - (x + 0.5) * x.ln() + x - LN_SQRT_2PI;
    }
    let xx = x * x;
    if x > 500.0 {
        (S0 - S1 / xx) / x
    } else if x > 80.0 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if x > 35.0 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// `ln n!` for integer `n`.
pub fn log_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

/// Natural log of the generalized binomial coefficient `C(n, k)` for real `n >= 0`.
///
/// Relative accuracy is about 1e-14. Returns `-inf` when the coefficient
/// vanishes (integer `n < k`). Non-integer
/// `n < k - 1` is rejected because the coefficient can change sign there.
pub fn log_binomial(n: f64, k: u64) -> Result<f64> {
    if !n.is_finite() || n < 0.0 {
        return Err(invalid(format!("binomial upper argument must be finite and >= 0, got {n}")));
    }
    Ok(log_binomial_unchecked(n, k))
}

/// [`log_binomial`] without argument validation, for hot loops whose
/// arguments are valid by construction. Panics in debug builds on bad input.
pub(crate) fn log_binomial_unchecked(n: f64, k: u64) -> f64 {
    debug_assert!(n.is_finite() && n >= 0.0);
    if k == 0 {
        return 0.0;
    }
    let kf = k as f64;
    let m = n - kf;
    if m < 0.0 {
        if n.fract() == 0.0 {
            return f64::NEG_INFINITY;
        }
        debug_assert!(m > -1.0, "generalized binomial with n < k - 1");
        return libm::lgamma(n + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(m + 1.0);
    }
    if m == 0.0 {
        return 0.0;
    }
    if n <= STIRLING_SERIES_MIN + 1.0 {
        return libm::lgamma(n + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(m + 1.0);
    }
    if m < 1.0 {
        // n and k are both large, only the fractional remainder is small
        return stirling_error(n) - stirling_error(kf) + (kf + 0.5) * (m / kf).ln_1p() + m * n.ln()
            - m
            - libm::lgamma(m + 1.0);
    }
    // ln(k/n) and ln(m/n), each from whichever of k, m is the smaller share of n
    let ln_k_share = if kf <= m { (kf / n).ln() } else { (-m / n).ln_1p() };
    let ln_m_share = if m <= kf { (m / n).ln() } else { (-kf / n).ln_1p() };
    stirling_error(n) - stirling_error(kf) - stirling_error(m) - kf * ln_k_share - m * ln_m_share
        + 0.5 * (n.ln() - kf.ln() - m.ln())
        - LN_SQRT_2PI
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sums `exp(logs[i])` smallest-first after factoring out the largest exponent.
pub(crate) fn sum_exp_ascending(logs: &mut [f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    logs.sort_by(|a, b| a.total_cmp(b));
    let scaled: f64 = logs.iter().map(|&l| (l - max).exp()).sum();
    scaled * max.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_integer_values() {
        assert!((log_binomial(5.0, 2).unwrap() - 10f64.ln()).abs() < 1e-15);
        assert_eq!(log_binomial(7.3, 0).unwrap(), 0.0);
        assert_eq!(log_binomial(0.0, 0).unwrap(), 0.0);
        assert_eq!(log_binomial(3.0, 5).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_binomial(40.0, 40).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_upper_argument() {
        assert!(log_binomial(-1.0, 2).is_err());
        assert!(log_binomial(f64::INFINITY, 2).is_err());
        assert!(log_binomial(f64::NAN, 0).is_err());
    }

    #[test]
    fn fractional_upper_argument() {
        // C(2.5, 2) = 2.5 * 1.5 / 2
        let v = log_binomial(2.5, 2).unwrap();
        assert!((v - (2.5f64 * 1.5 / 2.0).ln()).abs() < 1e-14);
        // large n, m in (0, 1): C(30.5, 30) = Gamma(31.5) / (Gamma(31) Gamma(1.5))
        let direct = libm::lgamma(31.5) - libm::lgamma(31.0) - libm::lgamma(1.5);
        assert!((log_binomial(30.5, 30).unwrap() - direct).abs() < 1e-12);
        // n in (k - 1, k)
        let direct = libm::lgamma(4.5) - libm::lgamma(5.0) - libm::lgamma(0.5);
        assert!((log_binomial(3.5, 4).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn stirling_series_matches_lgamma() {
        for &x in &[15.5, 20.0, 36.0, 81.0, 501.0] {
            let direct = libm::lgamma(x + 1.0) - (x + 0.5) * f64::ln(x) + x - LN_SQRT_2PI;
            // the direct form carries the absolute rounding of lgamma(x + 1)
            let slack = 8.0 * f64::EPSILON * libm::lgamma(x + 1.0);
            assert!((stirling_error(x) - direct).abs() < slack, "x = {x}");
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        assert!((s.value() - (1.0 + 1e-14)).abs() < 1e-17);
    }

    proptest! {
        #[test]
        fn pascal_rule(n in 2u64..3000, k_frac in 0.0f64..1.0) {
            let k = 1 + ((n - 2) as f64 * k_frac) as u64;
            let lhs = log_binomial(n as f64, k).unwrap();
            let a = log_binomial((n - 1) as f64, k - 1).unwrap();
            let b = log_binomial((n - 1) as f64, k).unwrap();
            let hi = a.max(b);
            let rhs = hi + ((a - hi).exp() + (b - hi).exp()).ln();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }

        #[test]
        fn symmetric_for_integer_n(n in 1u64..100_000, k_frac in 0.0f64..1.0) {
            let k = (n as f64 * k_frac) as u64;
            let a = log_binomial(n as f64, k).unwrap();
            let b = log_binomial(n as f64, n - k).unwrap();
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(1.0));
        }

        #[test]
        fn real_upper_argument_matches_lgamma(n in 16.0f64..400.0, k in 0u64..16) {
            let direct = libm::lgamma(n + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma(n - k as f64 + 1.0);
            let v = log_binomial(n, k).unwrap();
            prop_assert!((v - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }
}
