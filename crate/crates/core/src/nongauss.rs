//! Entropic nonGaussianity of exact-count conditional states.
//!
//! The Gaussian reference of a number-diagonal state with `mu` equally
//! populated modes is the factorized thermal state with the same photons per
//! mode, and the factorized Fock state (zero entropy) maximizes the measure at
//! fixed energy. So `delta = S_ref - S_state` and `delta_R = 1 - S_state / S_ref`.
//! All entropies are in nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::CompensatedSum;
use crate::conditioner::{conditional_mean, ConditionalState, Spectrum};
use crate::counting::check_tol;
use crate::error::{invalid, Error, Result};
use crate::params::ExperimentParams;

/// Omitted spectral weight above which entropies are refused.
pub const TAIL_ERROR: f64 = 1e-6;
/// Omitted spectral weight above which entropies are flagged.
pub const TAIL_WARN: f64 = 1e-9;

/// An entropy and a bound on the part of the sum that was truncated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub tail_bound: f64,
}

fn check_tail(tail_bound: f64) -> Result<()> {
    if tail_bound > TAIL_ERROR {
        return Err(Error::TailTooLarge { tail_bound, limit: TAIL_ERROR });
    }
    if tail_bound > TAIL_WARN {
        log::warn!("entropy computed with {tail_bound:e} of the spectrum omitted");
    }
    Ok(())
}

/// Von Neumann entropy `-sum C(gamma+mu-1, gamma) w ln w` of a conditional state.
pub fn entropy_conditional(state: &ConditionalState) -> Result<EntropyEstimate> {
    check_tail(state.tail_bound())?;
    let mut sum = CompensatedSum::default();
    for ((_, m), &ln_w) in state.masses().zip(state.log_weights()) {
        if m > 0.0 {
            sum.add(-m * ln_w);
        }
    }
    Ok(EntropyEstimate { value: sum.value(), tail_bound: state.entropy_tail_bound() })
}

/// `h(n) = (n + 1) ln(n + 1) - n ln n`, the entropy of one thermal mode.
fn thermal_mode_entropy(nbar: f64) -> f64 {
    if nbar == 0.0 {
        return 0.0;
    }
    nbar.ln_1p() + nbar * nbar.recip().ln_1p()
}

/// Entropy of `mu` factorized thermal modes with `nbar` mean photons each.
pub fn thermal_entropy(nbar: f64, mu: f64) -> f64 {
    debug_assert!(nbar >= 0.0 && mu >= 1.0);
    mu * thermal_mode_entropy(nbar)
}

/// NonGaussianity of the state conditioned on `t` idler counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonGaussReport {
    pub params: ExperimentParams,
    pub t: u64,
    #[serde(rename = "S_state")]
    pub s_state: f64,
    #[serde(rename = "S_ref")]
    pub s_ref: f64,
    pub delta: f64,
    #[serde(rename = "delta_R")]
    pub delta_r: f64,
    /// `M_t / (eta mu)`, photons per mode of the reference state.
    pub nbar_per_mode: f64,
    pub entropy_tail_bound: f64,
    pub log_base: f64,
}

impl NonGaussReport {
    /// Re-expresses the entropies with logarithms to `base`.
    pub fn in_base(&self, base: f64) -> NonGaussReport {
        let scale = self.log_base.ln() / base.ln();
        let s_state = self.s_state * scale;
        let s_ref = self.s_ref * scale;
        NonGaussReport {
            s_state,
            s_ref,
            delta: s_ref - s_state,
            delta_r: renormalized(s_state, s_ref),
            entropy_tail_bound: self.entropy_tail_bound * scale,
            log_base: base,
            ..*self
        }
    }
}

fn renormalized(s_state: f64, s_ref: f64) -> f64 {
    if s_ref > 0.0 {
        (s_ref - s_state) / s_ref
    } else {
        0.0
    }
}

/// Computes `S_state`, `S_ref`, `delta` and `delta_R` for `rho_t`.
///
/// The spectrum is streamed rather than stored, so states with very large
/// photon numbers (small `eta` at fixed `M`) stay cheap in memory.
pub fn nongauss_report(params: &ExperimentParams, t: u64, tol: f64) -> Result<NonGaussReport> {
    check_tol(tol)?;
    let summary = Spectrum::new(params, t)?.walk(tol, |_, _, _, _| {})?;
    check_tail(summary.mass_tail)?;
    let closure = summary.mass + summary.mass_tail - 1.0;
    if closure.abs() > 1e-8 {
        return Err(Error::NonConvergence(format!("spectrum of t = {t} normalizes to 1 {closure:+e} for {params:?}")));
    }
    let nbar = conditional_mean(params, t) / (params.eta() * params.mu());
    let s_ref = thermal_entropy(nbar, params.mu());
    let s_state = summary.entropy;
    Ok(NonGaussReport {
        params: *params,
        t,
        s_state,
        s_ref,
        delta: s_ref - s_state,
        delta_r: renormalized(s_state, s_ref),
        nbar_per_mode: nbar,
        entropy_tail_bound: summary.entropy_tail,
        log_base: std::f64::consts::E,
    })
}

/// Mean photoelectron number `M` that yields conditional mean `mt` after
/// `t` idler counts, inverting the affine `M_t` relation.
pub fn solve_mean(mu: f64, eta: f64, t: u64, mt: f64) -> Result<f64> {
    let tf = t as f64;
    let numerator = mt - tf * eta;
    let denominator = tf + mu * (1.0 - eta) - mt;
    let mean = mu * numerator / denominator;
    if !(denominator > 0.0) || !(numerator >= 0.0) || !mean.is_finite() {
        return Err(Error::Infeasible(format!(
            "M_t = {mt} is unreachable for mu = {mu}, eta = {eta}, t = {t}; it must lie in [{}, {})",
            tf * eta,
            tf + mu * (1.0 - eta)
        )));
    }
    Ok(mean)
}

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Conditional photoelectron mean `M_t`.
    Mt,
    /// Conditioning count `t`.
    T,
    Eta,
    Mu,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Mt => "mt",
            SweepAxis::T => "t",
            SweepAxis::Eta => "eta",
            SweepAxis::Mu => "mu",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mt" => Ok(SweepAxis::Mt),
            "t" => Ok(SweepAxis::T),
            "eta" => Ok(SweepAxis::Eta),
            "mu" => Ok(SweepAxis::Mu),
            other => Err(invalid(format!("unknown sweep axis {other:?}; expected mt, t, eta or mu"))),
        }
    }
}

/// What holds the energy fixed while the other parameters move.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Energy {
    /// Fixed conditional mean `M_t`; `M` is solved per grid point.
    ConditionalMean(f64),
    /// Fixed unconditioned mean `M`.
    Mean(f64),
}

/// Grid definition for [`sweep`].
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub mu: f64,
    pub eta: f64,
    pub t: u64,
    pub energy: Energy,
    pub tol: f64,
}

/// One grid point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub report: NonGaussReport,
}

fn grid_point(spec: &SweepSpec, value: f64) -> Result<(ExperimentParams, u64)> {
    let (mut mu, mut eta, mut t, mut energy) = (spec.mu, spec.eta, spec.t, spec.energy);
    match spec.axis {
        SweepAxis::Mt => energy = Energy::ConditionalMean(value),
        SweepAxis::T => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(invalid(format!("conditioning counts must be integers, got {value}")));
            }
            t = value as u64;
        }
        SweepAxis::Eta => eta = value,
        SweepAxis::Mu => mu = value,
    }
    let mean = match energy {
        Energy::Mean(m) => m,
        Energy::ConditionalMean(mt) => solve_mean(mu, eta, t, mt)
            .map_err(|e| Error::Infeasible(format!("grid point {}={value}: {e}", spec.axis.name())))?,
    };
    Ok((ExperimentParams::new(mu, eta, mean)?, t))
}

/// Evaluates [`nongauss_report`] along one axis; rows keep the grid order.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(invalid("sweep grid is empty"));
    }
    let points = spec.values.iter().map(|&v| grid_point(spec, v)).collect::<Result<Vec<_>>>()?;
    points
        .par_iter()
        .zip(spec.values.par_iter())
        .map(|(&(params, t), &value)| {
            Ok(SweepRow { axis: spec.axis, value, report: nongauss_report(&params, t, spec.tol)? })
        })
        .collect()
}
