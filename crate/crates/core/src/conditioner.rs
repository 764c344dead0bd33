//! Conditional signal states prepared by counting idler photoelectrons.
//!
//! Conditioning on `t` idler counts leaves the signal diagonal in the
//! multimode Fock basis, with an eigenvalue `w_t(gamma)` that depends only
//! on the total photon number `gamma` and carries degeneracy
//! `C(gamma + mu - 1, gamma)`. Threshold and set rules mix these states with
//! the idler marginal as weights.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{log_binomial_unchecked, CompensatedSum};
use crate::counting::{check_tol, log_add_exp, log_joint_prob, log_marginal, marginal_distribution, series_tol};
use crate::distribution::PhotoCountDistribution;
use crate::error::{invalid, Error, Result};
use crate::params::ExperimentParams;

/// Acceptance probabilities below this are treated as impossible outcomes.
pub const UNDERFLOW: f64 = 1e-300;

/// Resolution of `1 - sum` for a normalized count distribution.
const NORMALIZER_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Steps between exact evaluations while walking a spectrum by recurrence.
const RESYNC_INTERVAL: u64 = 64;

const MAX_SPECTRUM_TERMS: u64 = 2_000_000_000;

/// Which idler outcomes are kept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SelectionRule {
    /// Exactly `t` counts.
    Exact(u64),
    /// Strictly more than the threshold.
    Above(u64),
    /// Strictly fewer than the threshold.
    Below(u64),
    /// The threshold or more.
    AtLeast(u64),
    /// The threshold or fewer.
    AtMost(u64),
    /// An explicit sorted, duplicate-free, non-empty list.
    Set(Vec<u64>),
}

impl SelectionRule {
    /// Builds a set rule, sorting and deduplicating the outcomes.
    pub fn set(mut outcomes: Vec<u64>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(invalid("selection set must not be empty"));
        }
        outcomes.sort_unstable();
        outcomes.dedup();
        Ok(SelectionRule::Set(outcomes))
    }

    pub fn accepts(&self, t: u64) -> bool {
        match self {
            SelectionRule::Exact(x) => t == *x,
            SelectionRule::Above(x) => t > *x,
            SelectionRule::Below(x) => t < *x,
            SelectionRule::AtLeast(x) => t >= *x,
            SelectionRule::AtMost(x) => t <= *x,
            SelectionRule::Set(xs) => xs.binary_search(&t).is_ok(),
        }
    }

    /// Accepted outcomes with non-negligible probability, plus a bound on
    /// the accepted mass that was left out (only open-ended rules omit any).
    fn outcomes(&self, params: &ExperimentParams, tol: f64) -> Result<(Vec<u64>, f64)> {
        let open_from = match self {
            SelectionRule::Exact(t) => return Ok((vec![*t], 0.0)),
            SelectionRule::Below(x) => return Ok(((0..*x).collect(), 0.0)),
            SelectionRule::AtMost(x) => return Ok(((0..=*x).collect(), 0.0)),
            SelectionRule::Set(xs) => return Ok((xs.clone(), 0.0)),
            SelectionRule::Above(x) => x + 1,
            SelectionRule::AtLeast(x) => *x,
        };
        let marginal = marginal_distribution(params, tol)?;
        let last = marginal.len() as u64 - 1;
        if open_from > last {
            // everything accepted lies in the geometric tail
            return Ok((Vec::new(), marginal.tail_bound()));
        }
        Ok(((open_from..=last).collect(), marginal.tail_bound()))
    }
}

impl std::fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionRule::Exact(t) => write!(f, "t={t}"),
            SelectionRule::Above(t) => write!(f, "t>{t}"),
            SelectionRule::Below(t) => write!(f, "t<{t}"),
            SelectionRule::AtLeast(t) => write!(f, "t>={t}"),
            SelectionRule::AtMost(t) => write!(f, "t<={t}"),
            SelectionRule::Set(ts) => {
                let list: Vec<String> = ts.iter().map(u64::to_string).collect();
                write!(f, "t in {{{}}}", list.join(","))
            }
        }
    }
}

/// Photoelectron mean of the conditional signal state,
/// `M_t = [t (M + eta mu) + mu M (1 - eta)] / (M + mu)`.
pub fn conditional_mean(params: &ExperimentParams, t: u64) -> f64 {
    let (mu, eta, m) = (params.mu(), params.eta(), params.mean());
    (t as f64 * (m + eta * mu) + mu * m * (1.0 - eta)) / (m + mu)
}

/// Eigenvalue `w_t(gamma)` of the conditional state on every multi-index with
/// total photon number `gamma`; zero below `t`.
pub fn weight(params: &ExperimentParams, t: u64, gamma: u64) -> Result<f64> {
    Ok(Spectrum::new(params, t)?.ln_weight(gamma).exp())
}

#[derive(Default)]
struct Accumulator {
    mass: CompensatedSum,
    entropy: CompensatedSum,
}

/// Log-space view of one conditional spectrum.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Spectrum {
    params: ExperimentParams,
    t: u64,
    /// Everything in `ln w_t(gamma)` that does not depend on gamma.
    ln_const: f64,
    /// `ln[(M_t - t eta) / (M_t + mu eta)]`.
    ln_ratio: f64,
    ratio: f64,
}

/// Sums collected while walking a spectrum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SpectrumSummary {
    pub gamma_min: u64,
    /// Degeneracy-weighted eigenvalue sum over the visited range.
    pub mass: f64,
    /// `-sum d w ln w` over the visited range.
    pub entropy: f64,
    /// Upper bound on the omitted degeneracy-weighted mass.
    pub mass_tail: f64,
    /// Upper bound on the omitted entropy contribution.
    pub entropy_tail: f64,
}

impl Spectrum {
    pub(crate) fn new(params: &ExperimentParams, t: u64) -> Result<Self> {
        let ln_p2 = log_marginal(params, t);
        if !(ln_p2.exp() > UNDERFLOW) {
            return Err(Error::ImpossibleOutcome { t, probability: ln_p2.exp() });
        }
        let (mu, eta, m) = (params.mu(), params.eta(), params.mean());
        let tf = t as f64;
        // (M_t - t eta) / (M_t + mu eta) = 1 - eta (M + mu) / (M + eta mu); the
        // ratio sits near 1 when eta is small, so its log goes through ln_1p
        let ln_ratio = if m == 0.0 { f64::NEG_INFINITY } else { (-eta * (m + mu) / (m + eta * mu)).ln_1p() };
        let ln_const = tf * eta.ln() - ln_p2 - mu * (m / (eta * mu)).ln_1p() - tf * (-eta).ln_1p();
        Ok(Spectrum { params: *params, t, ln_const, ln_ratio, ratio: ln_ratio.exp() })
    }

    pub(crate) fn ln_weight(&self, gamma: u64) -> f64 {
        if gamma < self.t {
            return f64::NEG_INFINITY;
        }
        let power = if gamma == 0 { 0.0 } else { gamma as f64 * self.ln_ratio };
        log_binomial_unchecked(gamma as f64, self.t) + power + self.ln_const
    }

    pub(crate) fn ln_degeneracy(&self, gamma: u64) -> f64 {
        log_binomial_unchecked(gamma as f64 + self.params.mu() - 1.0, gamma)
    }

    /// `m(gamma + 1) / m(gamma)` for the degeneracy-weighted masses; non-increasing in gamma.
    fn step(&self, gamma: u64) -> f64 {
        let g = gamma as f64;
        self.ratio * (g + self.params.mu()) / (g + 1.0 - self.t as f64)
    }

    fn mode(&self) -> u64 {
        if self.ratio == 0.0 {
            return self.t;
        }
        let y = self.ratio;
        let guess = ((y * (self.params.mu() - 1.0) + self.t as f64) / (1.0 - y)).floor();
        let mut mode = if guess.is_finite() && guess > self.t as f64 { guess as u64 } else { self.t };
        while mode > self.t && self.step(mode - 1) < 1.0 {
            mode -= 1;
        }
        while self.step(mode) > 1.0 {
            mode += 1;
        }
        mode
    }

    /// Visits every gamma that carries non-negligible mass, starting at the
    /// mode and moving outwards until both geometric tail bounds fall below
    /// `tol / 2` of the accumulated mass. `visit(gamma, ln_w, mass, upward)`.
    pub(crate) fn walk(&self, tol: f64, mut visit: impl FnMut(u64, f64, f64, bool)) -> Result<SpectrumSummary> {
        let mode = self.mode();
        let mut acc = Accumulator::default();
        let mut take = |acc: &mut Accumulator, gamma: u64, ln_w: f64, m: f64, upward: bool| {
            acc.mass.add(m);
            if m > 0.0 {
                acc.entropy.add(-m * ln_w);
            }
            visit(gamma, ln_w, m, upward);
        };
        let exact = |gamma: u64| {
            let ln_w = self.ln_weight(gamma);
            (ln_w, (self.ln_degeneracy(gamma) + ln_w).exp())
        };

        // upward from the mode; neighbours follow by recurrence with a
        // periodic exact restart
        let half = tol / 2.0;
        let ln_step_up = -self.ln_ratio;
        let tf = self.t as f64;
        let mut gamma = mode;
        let (mut ln_w, mut m) = exact(gamma);
        let (mass_up, entropy_up) = loop {
            take(&mut acc, gamma, ln_w, m, true);
            let r = self.step(gamma);
            if r < 1.0 {
                let geo = r / (1.0 - r);
                let tail = m * geo;
                if tail <= half * acc.mass.value() {
                    let entropy_tail = m * (-ln_w * geo + ln_step_up * geo / (1.0 - r));
                    break (tail, entropy_tail);
                }
            }
            gamma += 1;
            if (gamma - mode).is_multiple_of(RESYNC_INTERVAL) {
                (ln_w, m) = exact(gamma);
            } else {
                ln_w += self.ln_ratio - (-tf / gamma as f64).ln_1p();
                m *= r;
            }
            if gamma - mode > MAX_SPECTRUM_TERMS {
                return Err(Error::NonConvergence(format!("spectrum of t={} above {gamma}", self.t)));
            }
        };

        // downward from the mode
        let ln_step_down = (((self.t + 1) as f64).ln() + self.ln_ratio).max(0.0);
        let mut gamma = mode;
        let (mut ln_w, mut m) = exact(gamma);
        let (mass_down, entropy_down) = loop {
            if gamma == self.t {
                break (0.0, 0.0);
            }
            gamma -= 1;
            if (mode - gamma).is_multiple_of(RESYNC_INTERVAL) {
                (ln_w, m) = exact(gamma);
            } else {
                ln_w += (-tf / (gamma + 1) as f64).ln_1p() - self.ln_ratio;
                m /= self.step(gamma);
            }
            take(&mut acc, gamma, ln_w, m, false);
            if gamma == self.t {
                break (0.0, 0.0);
            }
            let left = (gamma - self.t) as f64;
            let count_mass = m * left;
            let count_entropy = m * (-ln_w * left + ln_step_down * left * (left + 1.0) / 2.0);
            let rho = 1.0 / self.step(gamma - 1);
            let (geo_mass, geo_entropy) = if rho < 1.0 {
                let geo = rho / (1.0 - rho);
                (m * geo, m * (-ln_w * geo + ln_step_down * geo / (1.0 - rho)))
            } else {
                (f64::INFINITY, f64::INFINITY)
            };
            let tail = count_mass.min(geo_mass);
            if tail <= half * acc.mass.value() {
                break (tail, count_entropy.min(geo_entropy));
            }
            if mode - gamma > MAX_SPECTRUM_TERMS {
                return Err(Error::NonConvergence(format!("spectrum of t={} below {gamma}", self.t)));
            }
        };

        Ok(SpectrumSummary {
            gamma_min: gamma,
            mass: acc.mass.value(),
            entropy: acc.entropy.value(),
            mass_tail: mass_up + mass_down,
            entropy_tail: entropy_up + entropy_down,
        })
    }
}

/// The signal state after the idler registered exactly `t` photoelectrons.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalState {
    t: u64,
    params: ExperimentParams,
    gamma_min: u64,
    log_weights: Vec<f64>,
    tail_bound: f64,
    entropy_tail_bound: f64,
    mean_t: f64,
    tol: f64,
}

impl ConditionalState {
    pub fn new(params: &ExperimentParams, t: u64, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        let spectrum = Spectrum::new(params, t)?;
        let mut logs = VecDeque::new();
        let summary = spectrum.walk(tol, |_, ln_w, _, upward| {
            if upward {
                logs.push_back(ln_w);
            } else {
                logs.push_front(ln_w);
            }
        })?;
        Ok(ConditionalState {
            t,
            params: *params,
            gamma_min: summary.gamma_min,
            log_weights: logs.into(),
            tail_bound: summary.mass_tail,
            entropy_tail_bound: summary.entropy_tail,
            mean_t: conditional_mean(params, t),
            tol,
        })
    }

    /// Rebuilds a state from stored log-weights, e.g. after deserialization.
    pub fn from_parts(
        params: ExperimentParams,
        t: u64,
        gamma_min: u64,
        log_weights: Vec<f64>,
        tail_bound: f64,
        tol: f64,
    ) -> Result<Self> {
        if gamma_min < t {
            return Err(invalid(format!("support starts at {gamma_min}, below t = {t}")));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w > 0.0) {
            return Err(invalid("eigenvalues must lie in [0, 1]"));
        }
        Ok(ConditionalState {
            t,
            params,
            gamma_min,
            log_weights,
            tail_bound,
            entropy_tail_bound: f64::NAN,
            mean_t: conditional_mean(&params, t),
            tol,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn params(&self) -> &ExperimentParams {
        &self.params
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// First total photon number with stored weight; lower values are either
    /// excluded by `gamma >= t` or folded into [`Self::tail_bound`].
    pub fn gamma_min(&self) -> u64 {
        self.gamma_min
    }

    pub fn gamma_max(&self) -> u64 {
        self.gamma_min + self.log_weights.len() as u64 - 1
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `w_t(gamma)`, zero outside the stored range.
    pub fn weight(&self, gamma: u64) -> f64 {
        self.ln_weight(gamma).exp()
    }

    pub fn ln_weight(&self, gamma: u64) -> f64 {
        if gamma < self.gamma_min {
            return f64::NEG_INFINITY;
        }
        self.log_weights.get((gamma - self.gamma_min) as usize).copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// `ln C(gamma + mu - 1, gamma)`.
    pub fn ln_degeneracy(&self, gamma: u64) -> f64 {
        log_binomial_unchecked(gamma as f64 + self.params.mu() - 1.0, gamma)
    }

    /// Upper bound on the degeneracy-weighted eigenvalue sum left out.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Upper bound on the entropy contribution left out; NaN if unknown.
    pub fn entropy_tail_bound(&self) -> f64 {
        self.entropy_tail_bound
    }

    /// Closed-form photoelectron mean `M_t`.
    pub fn conditional_mean(&self) -> f64 {
        self.mean_t
    }

    /// `(gamma, degeneracy-weighted mass)` over the stored support.
    pub fn masses(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.log_weights.iter().enumerate().map(move |(i, &ln_w)| {
            let gamma = self.gamma_min + i as u64;
            (gamma, (self.ln_degeneracy(gamma) + ln_w).exp())
        })
    }

    /// `sum_gamma C(gamma + mu - 1, gamma) w(gamma)` over the stored support.
    pub fn mass(&self) -> f64 {
        let mut sum = CompensatedSum::default();
        self.masses().for_each(|(_, m)| sum.add(m));
        sum.value()
    }

    /// Mean total photon number (photons, not photoelectrons).
    pub fn photon_mean(&self) -> f64 {
        let mut sum = CompensatedSum::default();
        self.masses().for_each(|(g, m)| sum.add(g as f64 * m));
        sum.value()
    }

    /// Counting distribution `Tr[rho_t Pi_s]` for `s` in `0..len`.
    pub fn count_distribution(&self, len: usize) -> Vec<f64> {
        let spectrum: Vec<(u64, f64)> = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(i, &ln_w)| {
                let gamma = self.gamma_min + i as u64;
                (gamma, self.ln_degeneracy(gamma) + ln_w)
            })
            .collect();
        povm_counts(&spectrum, self.params.eta(), len)
    }
}

/// `Tr[rho Pi_s] = sum_gamma m(gamma) C(gamma, s) eta^s (1 - eta)^(gamma - s)`,
/// with `spectrum` holding `(gamma, ln m(gamma))`.
fn povm_counts(spectrum: &[(u64, f64)], eta: f64, len: usize) -> Vec<f64> {
    let ln_eta = eta.ln();
    let ln_loss = (-eta).ln_1p();
    (0..len as u64)
        .into_par_iter()
        .map(|s| {
            let mut sum = CompensatedSum::default();
            for &(gamma, ln_m) in spectrum.iter().filter(|(g, _)| *g >= s) {
                let ln =
                    ln_m + log_binomial_unchecked(gamma as f64, s) + s as f64 * ln_eta + (gamma - s) as f64 * ln_loss;
                sum.add(ln.exp());
            }
            sum.value()
        })
        .collect()
}

/// A `p_2`-weighted mixture of exact-count conditional states.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    rule: SelectionRule,
    params: ExperimentParams,
    /// `(t, p_2(t))` for every included outcome.
    components: Vec<(u64, f64)>,
    acceptance: f64,
    gamma_min: u64,
    log_weights: Vec<f64>,
    tail_bound: f64,
}

impl MixtureState {
    pub fn rule(&self) -> &SelectionRule {
        &self.rule
    }

    pub fn params(&self) -> &ExperimentParams {
        &self.params
    }

    pub fn components(&self) -> &[(u64, f64)] {
        &self.components
    }

    /// Preparation success probability `P(T) = sum_{t in T} p_2(t)`.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    pub fn gamma_min(&self) -> u64 {
        self.gamma_min
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Closed-form photoelectron mean, `sum p_2(t) M_t / P(T)`.
    pub fn conditional_mean(&self) -> f64 {
        let included: f64 = self.components.iter().map(|&(_, p)| p).sum();
        self.components.iter().map(|&(t, p)| p * conditional_mean(&self.params, t)).sum::<f64>() / included
    }

    pub fn mass(&self) -> f64 {
        let mut sum = CompensatedSum::default();
        for (i, &ln_w) in self.log_weights.iter().enumerate() {
            let gamma = self.gamma_min + i as u64;
            sum.add((log_binomial_unchecked(gamma as f64 + self.params.mu() - 1.0, gamma) + ln_w).exp());
        }
        sum.value()
    }

    pub fn count_distribution(&self, len: usize) -> Vec<f64> {
        let spectrum: Vec<(u64, f64)> = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(i, &ln_w)| {
                let gamma = self.gamma_min + i as u64;
                (gamma, log_binomial_unchecked(gamma as f64 + self.params.mu() - 1.0, gamma) + ln_w)
            })
            .collect();
        povm_counts(&spectrum, self.params.eta(), len)
    }
}

/// Result of [`build_conditional`].
#[derive(Clone, Debug, PartialEq)]
pub enum Conditioned {
    Exact(ConditionalState),
    Mixture(MixtureState),
}

impl Conditioned {
    /// Probability of accepting the selected idler outcomes.
    pub fn acceptance(&self) -> f64 {
        match self {
            Conditioned::Exact(state) => log_marginal(&state.params, state.t).exp(),
            Conditioned::Mixture(mix) => mix.acceptance,
        }
    }

    pub fn conditional_mean(&self) -> f64 {
        match self {
            Conditioned::Exact(state) => state.conditional_mean(),
            Conditioned::Mixture(mix) => mix.conditional_mean(),
        }
    }

    pub fn tail_bound(&self) -> f64 {
        match self {
            Conditioned::Exact(state) => state.tail_bound,
            Conditioned::Mixture(mix) => mix.tail_bound,
        }
    }

    pub fn count_distribution(&self, len: usize) -> Vec<f64> {
        match self {
            Conditioned::Exact(state) => state.count_distribution(len),
            Conditioned::Mixture(mix) => mix.count_distribution(len),
        }
    }
}

/// Builds the conditional signal state for `rule`.
///
/// `exact(t)` gives a single [`ConditionalState`]; every other rule gives the
/// `p_2`-weighted mixture, renormalized by the acceptance probability.
pub fn build_conditional(params: &ExperimentParams, rule: &SelectionRule, tol: f64) -> Result<Conditioned> {
    check_tol(tol)?;
    if let SelectionRule::Exact(t) = rule {
        return Ok(Conditioned::Exact(ConditionalState::new(params, *t, tol)?));
    }
    let (outcomes, omitted) = rule.outcomes(params, tol)?;
    let components: Vec<(u64, f64)> =
        outcomes.iter().map(|&t| (t, log_marginal(params, t).exp())).filter(|&(_, p)| p > UNDERFLOW).collect();
    let included: f64 = components.iter().map(|&(_, p)| p).sum();
    if !(included > UNDERFLOW) {
        return Err(Error::EmptyAcceptance { probability: included + omitted });
    }

    let states =
        components.par_iter().map(|&(t, _)| ConditionalState::new(params, t, tol)).collect::<Result<Vec<_>>>()?;
    let gamma_min = states.iter().map(ConditionalState::gamma_min).min().unwrap_or(0);
    let gamma_max = states.iter().map(ConditionalState::gamma_max).max().unwrap_or(0);
    let mut log_weights = vec![f64::NEG_INFINITY; (gamma_max - gamma_min + 1) as usize];
    let mut tail_bound = omitted / (included + omitted);
    for (state, &(_, p)) in states.iter().zip(&components) {
        let ln_share = (p / included).ln();
        for (i, &ln_w) in state.log_weights.iter().enumerate() {
            let slot = &mut log_weights[(state.gamma_min - gamma_min) as usize + i];
            *slot = log_add_exp(*slot, ln_share + ln_w);
        }
        tail_bound += p / included * state.tail_bound;
    }
    Ok(Conditioned::Mixture(MixtureState {
        rule: rule.clone(),
        params: *params,
        components,
        acceptance: included + omitted,
        gamma_min,
        log_weights,
        tail_bound,
    }))
}

/// Whether [`cond_count_dist_with`] cross-checks the Bayes route against
/// the POVM route.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Verification {
    #[default]
    On,
    Off,
}

/// Conditional photoelectron distribution `p_{1|2}(s | T)` of the signal,
/// cross-checked against the POVM route.
pub fn cond_count_dist(params: &ExperimentParams, rule: &SelectionRule, tol: f64) -> Result<PhotoCountDistribution> {
    cond_count_dist_with(params, rule, tol, Verification::On)
}

pub fn cond_count_dist_with(
    params: &ExperimentParams,
    rule: &SelectionRule,
    tol: f64,
    verification: Verification,
) -> Result<PhotoCountDistribution> {
    check_tol(tol)?;
    let (outcomes, omitted) = rule.outcomes(params, tol)?;
    let components: Vec<(u64, f64)> =
        outcomes.iter().map(|&t| (t, log_marginal(params, t))).filter(|&(_, ln_p)| ln_p.exp() > UNDERFLOW).collect();
    let included: f64 = components.iter().map(|&(_, ln_p)| ln_p.exp()).sum();
    if !(included > UNDERFLOW) {
        if let SelectionRule::Exact(t) = rule {
            return Err(Error::ImpossibleOutcome { t: *t, probability: included });
        }
        return Err(Error::EmptyAcceptance { probability: included + omitted });
    }
    let ln_included = included.ln();

    // Bayes route: p_12(s, t) / P(T), summed over accepted t.
    let cell_tol = series_tol(tol);
    let mean =
        components.iter().map(|&(t, ln_p)| (ln_p - ln_included).exp() * conditional_mean(params, t)).sum::<f64>();
    let cap = (10.0 * (mean + params.mu()) + 1000.0) as u64;
    let mut probs: Vec<f64> = Vec::new();
    let mut cumulative = CompensatedSum::default();
    let geometric_tail;
    let mut s = 0u64;
    loop {
        let cells = components
            .par_iter()
            .map(|&(t, _)| log_joint_prob(params, s, t, cell_tol))
            .collect::<Result<Vec<f64>>>()?;
        let mut p = CompensatedSum::default();
        for ln_cell in cells {
            p.add((ln_cell - ln_included).exp());
        }
        let p = p.value();
        let ratio = probs.last().map_or(f64::INFINITY, |&prev| p / prev);
        probs.push(p);
        cumulative.add(p);
        let missing = 1.0 - cumulative.value();
        if s as f64 >= mean {
            // 1 - sum cannot resolve below the rounding of the normalizer;
            // there a geometric estimate from the decaying terms decides
            let geometric = if ratio < 1.0 { p * ratio / (1.0 - ratio) } else { f64::INFINITY };
            if missing <= tol / 2.0 || (missing <= tol / 2.0 + NORMALIZER_FLOOR && geometric <= tol / 2.0) {
                geometric_tail = if missing <= tol / 2.0 { 0.0 } else { geometric };
                break;
            }
        }
        s += 1;
        if s > cap {
            return Err(Error::NonConvergence(format!(
                "conditional distribution for {rule} still missing {missing:e} at s = {s}"
            )));
        }
    }
    let tail_bound = (1.0 - cumulative.value()).max(geometric_tail).max(0.0) + omitted / (included + omitted);

    if verification == Verification::On {
        let povm = build_conditional(params, rule, tol)?.count_distribution(probs.len());
        let limit = 10.0 * tol;
        for (s, (&bayes, &other)) in probs.iter().zip(&povm).enumerate() {
            if (bayes - other).abs() > limit {
                return Err(Error::RouteMismatch { s, bayes, povm: other });
            }
        }
    }
    Ok(PhotoCountDistribution::new(probs, tail_bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting::marginal;

    fn set_a() -> ExperimentParams {
        ExperimentParams::new(197.0, 0.06, 13.4).unwrap()
    }

    #[test]
    fn weights_vanish_below_t() {
        let p = set_a();
        assert_eq!(weight(&p, 10, 9).unwrap(), 0.0);
        assert_eq!(weight(&p, 10, 0).unwrap(), 0.0);
        assert!(weight(&p, 10, 10).unwrap() > 0.0);
    }

    #[test]
    fn conditional_mean_closed_form() {
        let p = ExperimentParams::new(3.0, 0.2, 5.0).unwrap();
        // t = M reproduces M
        assert!((conditional_mean(&p, 5) - 5.0).abs() < 1e-14);
        assert!((conditional_mean(&p, 0) - 3.0 * 5.0 * 0.8 / 8.0).abs() < 1e-14);
        let slope = conditional_mean(&p, 7) - conditional_mean(&p, 6);
        assert!((slope - (5.0 + 0.2 * 3.0) / 8.0).abs() < 1e-14);
    }

    #[test]
    fn state_normalizes_and_has_photon_mean() {
        let p = set_a();
        let state = ConditionalState::new(&p, 10, 1e-12).unwrap();
        assert!(state.gamma_min() >= 10);
        assert!((state.mass() + state.tail_bound() - 1.0).abs() < 1e-11);
        let photons = conditional_mean(&p, 10) / p.eta();
        assert!((state.photon_mean() - photons).abs() < 1e-8 * photons);
    }

    #[test]
    fn spectrum_mode_is_the_peak() {
        let p = set_a();
        let spectrum = Spectrum::new(&p, 15).unwrap();
        let mode = spectrum.mode();
        let ln_mass = |g: u64| spectrum.ln_degeneracy(g) + spectrum.ln_weight(g);
        assert!(ln_mass(mode) >= ln_mass(mode + 1));
        assert!(ln_mass(mode) >= ln_mass(mode - 1));
    }

    #[test]
    fn vacuum_conditioning() {
        let p = ExperimentParams::new(2.0, 0.5, 0.0).unwrap();
        let state = ConditionalState::new(&p, 0, 1e-12).unwrap();
        assert_eq!(state.weight(0), 1.0);
        assert_eq!(state.mass(), 1.0);
        assert!(matches!(ConditionalState::new(&p, 1, 1e-12), Err(Error::ImpossibleOutcome { .. })));
    }

    #[test]
    fn impossible_outcomes_are_rejected() {
        let p = ExperimentParams::new(1.0, 0.5, 1e-3).unwrap();
        assert!(matches!(weight(&p, 400, 500), Err(Error::ImpossibleOutcome { t: 400, .. })));
        let empty = cond_count_dist(&p, &SelectionRule::Above(1_000), 1e-12);
        assert!(matches!(empty, Err(Error::EmptyAcceptance { .. })));
    }

    #[test]
    fn rules_are_strict_unless_named_inclusive() {
        assert!(!SelectionRule::Above(11).accepts(11));
        assert!(SelectionRule::Above(11).accepts(12));
        assert!(!SelectionRule::Below(8).accepts(8));
        assert!(SelectionRule::AtLeast(11).accepts(11));
        assert!(SelectionRule::AtMost(8).accepts(8));
        assert_eq!(SelectionRule::set(vec![5, 1, 5]).unwrap(), SelectionRule::Set(vec![1, 5]));
        assert!(SelectionRule::set(vec![]).is_err());
    }

    #[test]
    fn zero_count_conditional_is_monotone() {
        let p = ExperimentParams::new(1.0, 0.9, 1.0).unwrap();
        let dist = cond_count_dist(&p, &SelectionRule::Exact(0), 1e-12).unwrap();
        assert!(dist.probs().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn mixture_acceptance_and_mean() {
        let p = ExperimentParams::new(25.0, 0.056, 17.1).unwrap();
        let rule = SelectionRule::Below(10);
        let Conditioned::Mixture(mix) = build_conditional(&p, &rule, 1e-12).unwrap() else {
            panic!("threshold rules give mixtures");
        };
        let expected: f64 = (0..10).map(|t| marginal(&p, t)).sum();
        assert!((mix.acceptance() - expected).abs() < 1e-14);
        assert!((mix.mass() + mix.tail_bound() - 1.0).abs() < 1e-11);
        let dist = cond_count_dist(&p, &rule, 1e-12).unwrap();
        assert!((dist.mean() - mix.conditional_mean()).abs() < 1e-9);
    }
}
