//! Unconditioned photoelectron statistics of the multimode twin beam.
//!
//! The joint distribution is the series
//!
//! ```text
//! p12(s,t) = (mu eta / (M + mu eta))^mu (eta / (1 - eta))^(s+t)
//!            * sum_{l >= max(s,t)} x^l C(l+mu-1, l) C(l, s) C(l, t),
//! x = M (1 - eta)^2 / (M + mu eta)
//! ```
//!
//! evaluated term by term in log space with the `(1 - eta)` powers folded
//! into the summand, so only non-negative powers of `1 - eta` appear.

use rayon::prelude::*;

use crate::combinatorics::{log_binomial_unchecked, sum_exp_ascending};
use crate::distribution::{JointDistribution, PhotoCountDistribution, ProbTable, Provenance};
use crate::error::{invalid, Error, Result};
use crate::params::ExperimentParams;

/// Default relative tolerance for series truncation.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Internal series are summed this much tighter than the caller's tolerance,
/// so per-cell truncation never dominates the table-level tail budget.
pub(crate) const SERIES_FRACTION: f64 = 1e-2;

const MAX_SERIES_TERMS: u64 = 50_000_000;

pub(crate) fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 && tol < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("tolerance must lie in (0, 1), got {tol}")))
    }
}

pub(crate) fn series_tol(tol: f64) -> f64 {
    (tol * SERIES_FRACTION).max(f64::EPSILON)
}

/// `ln(exp(a) + exp(b))`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Joint probability of `s` signal and `t` idler photoelectrons.
///
/// The series is summed until the geometric tail bound drops below
/// `tol` times the accumulated sum. The evaluation order depends only on
/// `(min(s,t), max(s,t))`, so the result is exactly symmetric.
pub fn joint_prob(params: &ExperimentParams, s: u64, t: u64, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    Ok(log_joint_prob(params, s, t, tol)?.exp())
}

pub(crate) fn log_joint_prob(params: &ExperimentParams, s: u64, t: u64, tol: f64) -> Result<f64> {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    let mu = params.mu();
    let eta = params.eta();
    let m = params.mean();
    if m == 0.0 {
        return Ok(if t == 0 { 0.0 } else { f64::NEG_INFINITY });
    }

    let ln_eta = eta.ln();
    let ln_1m_eta = (-eta).ln_1p();
    let ln_mean = m.ln();
    let ln_den = (m + mu * eta).ln();
    let ratio_base = m * (1.0 - eta) * (1.0 - eta) / (m + mu * eta);
    if !(ratio_base < 1.0) {
        return Err(Error::NonConvergence(format!("term ratio bound {ratio_base} >= 1 for {params:?}")));
    }

    let (sf, tf) = (s as f64, t as f64);
    let prefix = (mu + sf + tf) * ln_eta + mu * mu.ln() - mu * ln_den;
    let ln_tol = tol.ln();

    let mut logs = Vec::with_capacity(64);
    let mut ln_acc = f64::NEG_INFINITY;
    let mut l = t;
    loop {
        let lf = l as f64;
        let term = prefix + (2.0 * lf - sf - tf) * ln_1m_eta + lf * ln_mean - lf * ln_den
            + log_binomial_unchecked(lf + mu - 1.0, l)
            + log_binomial_unchecked(lf, s)
            + log_binomial_unchecked(lf, t);
        logs.push(term);
        ln_acc = log_add_exp(ln_acc, term);

        // ratio of term l+1 to term l; decreasing in l
        let ratio = ratio_base * (lf + mu) * (lf + 1.0) / ((lf + 1.0 - sf) * (lf + 1.0 - tf));
        if ratio < 1.0 && term + (ratio / (1.0 - ratio)).ln() <= ln_tol + ln_acc {
            break;
        }
        l += 1;
        if l - t > MAX_SERIES_TERMS {
            return Err(Error::NonConvergence(format!(
                "joint series at (s={s}, t={t}) exceeded {MAX_SERIES_TERMS} terms"
            )));
        }
    }
    let sum = sum_exp_ascending(&mut logs);
    Ok(if sum > 0.0 { sum.ln() } else { f64::NEG_INFINITY })
}

/// `ln p_2(t)` of the multithermal (negative binomial) marginal.
pub(crate) fn log_marginal(params: &ExperimentParams, t: u64) -> f64 {
    let mu = params.mu();
    let m = params.mean();
    if m == 0.0 {
        return if t == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let tf = t as f64;
    log_binomial_unchecked(tf + mu - 1.0, t) + tf * (m / mu).ln() - (tf + mu) * (m / mu).ln_1p()
}

/// Closed-form multithermal marginal
/// `p_2(t) = C(t+mu-1, t) (M/mu)^t (1 + M/mu)^-(t+mu)`.
pub fn marginal(params: &ExperimentParams, t: u64) -> f64 {
    log_marginal(params, t).exp()
}

/// The multithermal marginal tabulated until the omitted mass is below `tol`.
pub fn marginal_distribution(params: &ExperimentParams, tol: f64) -> Result<PhotoCountDistribution> {
    check_tol(tol)?;
    let mu = params.mu();
    let ratio_base = params.mean() / (params.mean() + mu);
    let mut probs = Vec::new();
    let mut t = 0u64;
    loop {
        let p = marginal(params, t);
        probs.push(p);
        let tf = t as f64;
        let ratio = ratio_base * (tf + mu) / (tf + 1.0);
        if ratio < 1.0 {
            let tail = p * ratio / (1.0 - ratio);
            if tail <= tol {
                return Ok(PhotoCountDistribution::new(probs, tail));
            }
        }
        t += 1;
        if t > MAX_SERIES_TERMS {
            return Err(Error::NonConvergence(format!("marginal tail for {params:?}")));
        }
    }
}

/// Guard on the size of tabulated joint distributions.
#[derive(Clone, Copy, Debug)]
pub struct TableOptions {
    pub cell_budget: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions { cell_budget: 4_000_000 }
    }
}

/// The joint distribution tabulated over `0..=s_max` on both axes, with the
/// range chosen so the omitted mass is at most `tol`.
pub fn joint_table(params: &ExperimentParams, tol: f64) -> Result<JointDistribution> {
    joint_table_with(params, tol, &TableOptions::default())
}

pub fn joint_table_with(params: &ExperimentParams, tol: f64, options: &TableOptions) -> Result<JointDistribution> {
    check_tol(tol)?;
    // union bound over the two arms, plus the per-cell series truncation
    let marginal = marginal_distribution(params, tol / 4.0)?;
    let n = marginal.len();
    let cells = n.saturating_mul(n);
    if cells > options.cell_budget {
        return Err(Error::TableTooLarge { s_max: n - 1, t_max: n - 1, cells, budget: options.cell_budget });
    }

    let cell_tol = series_tol(tol);
    let upper: Vec<(u64, u64)> = (0..n as u64).flat_map(|s| (s..n as u64).map(move |t| (s, t))).collect();
    let values = upper.par_iter().map(|&(s, t)| joint_prob(params, s, t, cell_tol)).collect::<Result<Vec<f64>>>()?;

    let mut probs = ProbTable::zeros(n, n);
    for (&(s, t), &p) in upper.iter().zip(&values) {
        probs.set(s as usize, t as usize, p);
        probs.set(t as usize, s as usize, p);
    }
    Ok(JointDistribution {
        probs,
        tail_bound: 2.0 * marginal.tail_bound() + cell_tol,
        tol,
        provenance: Provenance::Model { params: *params },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(mu: f64, eta: f64, m: f64) -> ExperimentParams {
        ExperimentParams::new(mu, eta, m).unwrap()
    }

    #[test]
    fn vacuum_table_is_single_cell() {
        let table = joint_table(&p(1.0, 0.99, 0.0), DEFAULT_TOL).unwrap();
        assert_eq!(table.probs.rows(), 1);
        assert_eq!(table.get(0, 0), 1.0);
        assert_eq!(joint_prob(&p(1.0, 0.99, 0.0), 1, 0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn geometric_marginal_for_single_mode() {
        let params = p(1.0, 0.3, 2.5);
        assert!((marginal(&params, 0) - 1.0 / 3.5).abs() < 1e-15);
        assert!((marginal(&params, 3) - (2.5f64 / 3.5).powi(3) / 3.5).abs() < 1e-15);
    }

    #[test]
    fn joint_prob_is_exactly_symmetric() {
        let params = p(25.0, 0.056, 17.1);
        for (s, t) in [(0, 5), (3, 17), (30, 12)] {
            assert_eq!(joint_prob(&params, s, t, 1e-12).unwrap(), joint_prob(&params, t, s, 1e-12).unwrap());
        }
    }

    #[test]
    fn single_mode_diagonal_dominates_near_unit_efficiency() {
        // eta -> 1 recovers the perfectly correlated twin beam
        let params = p(1.0, 1.0 - 1e-9, 2.0);
        let diag = joint_prob(&params, 1, 1, 1e-14).unwrap();
        assert!((diag - 2.0 / 9.0).abs() < 1e-7, "{diag}");
        assert!(joint_prob(&params, 1, 2, 1e-14).unwrap() < 1e-7);
    }

    #[test]
    fn marginal_distribution_moments() {
        let params = p(197.0, 0.06, 13.4);
        let d = marginal_distribution(&params, 1e-13).unwrap();
        assert!((d.total() + d.tail_bound() - 1.0).abs() < 1e-12);
        assert!((d.mean() - 13.4).abs() < 1e-9);
        let var = 13.4 * (1.0 + 13.4 / 197.0);
        assert!((d.variance() - var).abs() < 1e-6 * var);
    }

    #[test]
    fn cell_budget_is_enforced() {
        let err = joint_table_with(&p(2.0, 0.5, 40.0), 1e-12, &TableOptions { cell_budget: 100 }).unwrap_err();
        match err {
            Error::TableTooLarge { s_max, cells, budget, .. } => {
                assert!(s_max > 9);
                assert_eq!(cells, (s_max + 1) * (s_max + 1));
                assert_eq!(budget, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_tolerance() {
        let params = p(2.0, 0.5, 1.0);
        assert!(joint_prob(&params, 0, 0, 0.0).is_err());
        assert!(joint_prob(&params, 0, 0, f64::NAN).is_err());
        assert!(joint_table(&params, -1.0).is_err());
    }

    #[test]
    fn table_rows_sum_to_closed_form_marginal() {
        let params = p(3.0, 0.4, 2.2);
        let table = joint_table(&params, 1e-12).unwrap();
        let total = table.total();
        assert!(total <= 1.0 + 1e-14 && total + table.tail_bound >= 1.0 - 1e-11);
        for (t, col) in table.probs.col_sums().iter().enumerate() {
            assert!((col - marginal(&params, t as u64)).abs() < 1e-11, "t={t}");
        }
        let moments = table.probs.moments();
        assert!((moments.noise_reduction() - 0.6).abs() < 1e-9);
    }
}
