//! Recovering `(mu, eta, M)` from shot records, and model-data agreement.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::log_binomial_unchecked;
use crate::counting::joint_table;
use crate::distribution::ProbTable;
use crate::error::{Error, Result};
use crate::params::ExperimentParams;
use crate::sampler::{histogram, shot_rng, ShotRecord};

/// Fewest shots [`estimate_params`] accepts.
pub const MIN_SHOTS: usize = 100;

/// Largest mode count the likelihood refinement searches.
const MU_SEARCH_MAX: f64 = 1e7;

/// Bootstrap streams live apart from sampling streams with the same seed.
const BOOTSTRAP_STREAM_SALT: u64 = 0xb007_57a9_0000_0000;

/// Bhattacharyya overlap `sum sqrt(p q)` of the normalized tables, over the
/// union of both index ranges. Zero if either table is empty.
pub fn fidelity(p: &ProbTable, q: &ProbTable) -> f64 {
    let rows = p.rows().max(q.rows());
    let cols = p.cols().max(q.cols());
    let (mut overlap, mut mass_p, mut mass_q) = (0.0, 0.0, 0.0);
    for s in 0..rows {
        for t in 0..cols {
            let (a, b) = (p.get(s, t), q.get(s, t));
            overlap += (a * b).sqrt();
            mass_p += a;
            mass_q += b;
        }
    }
    if mass_p > 0.0 && mass_q > 0.0 {
        overlap / (mass_p * mass_q).sqrt()
    } else {
        0.0
    }
}

/// `var(s - t) / <s + t>` with the unbiased sample variance, no noise subtraction.
pub fn noise_reduction(record: &ShotRecord) -> Result<f64> {
    let n = record.len();
    if n < 2 {
        return Err(Error::DegenerateRecord(format!("noise reduction needs >= 2 shots, got {n}")));
    }
    let sum_total: f64 = record.shots.iter().map(|&(s, t)| (s + t) as f64).sum();
    if sum_total == 0.0 {
        return Err(Error::DegenerateRecord("no photoelectrons in either arm".into()));
    }
    let nf = n as f64;
    let mean_diff = record.shots.iter().map(|&(s, t)| s as f64 - t as f64).sum::<f64>() / nf;
    let var_diff =
        record.shots.iter().map(|&(s, t)| (s as f64 - t as f64 - mean_diff).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(var_diff / (sum_total / nf))
}

/// How the mode count is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeEstimator {
    /// `mu = M^2 / (var - M)` from the multithermal variance.
    #[default]
    Moments,
    /// Profile maximum likelihood of the multithermal marginal at the sample mean.
    MaxLikelihood,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateOptions {
    pub bootstrap: usize,
    pub seed: u64,
    pub modes: ModeEstimator,
    /// Tolerance for the model table used in the fidelity.
    pub tol: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions { bootstrap: 200, seed: 0, modes: ModeEstimator::Moments, tol: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub mean: f64,
    pub eta: f64,
    /// `None` when fewer than two resamples gave a finite mode count.
    pub mu: Option<f64>,
    pub noise_reduction: f64,
}

/// Parameter estimates of a shot record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub shots: usize,
    #[serde(rename = "M_hat")]
    pub mean_hat: f64,
    pub eta_hat: f64,
    /// `None` when the marginal is not super-Poissonian (unbounded mode count).
    pub mu_hat: Option<f64>,
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
    /// Fidelity of the model table at the estimates with the empirical histogram.
    pub fidelity: Option<f64>,
    pub standard_errors: StandardErrors,
    pub mode_estimator: ModeEstimator,
    pub bootstrap: usize,
    pub seed: u64,
    pub diagnostics: Vec<String>,
}

impl EstimationReport {
    /// The estimates as model parameters, if they form a valid set.
    /// A mode count below one is raised to one.
    pub fn params(&self) -> Option<ExperimentParams> {
        let mu = self.mu_hat?.max(1.0);
        ExperimentParams::new(mu, self.eta_hat, self.mean_hat).ok()
    }
}

impl fmt::Display for EstimationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let se = &self.standard_errors;
        writeln!(f, "shots        {}", self.shots)?;
        writeln!(f, "M            {:.6} +/- {:.6}", self.mean_hat, se.mean)?;
        writeln!(f, "eta          {:.6} +/- {:.6}", self.eta_hat, se.eta)?;
        match (self.mu_hat, se.mu) {
            (Some(mu), Some(e)) => writeln!(f, "mu           {mu:.4} +/- {e:.4}")?,
            (Some(mu), None) => writeln!(f, "mu           {mu:.4}")?,
            (None, _) => writeln!(f, "mu           unbounded")?,
        }
        writeln!(f, "R            {:.6} +/- {:.6}", self.r_hat, se.noise_reduction)?;
        if let Some(fid) = self.fidelity {
            writeln!(f, "fidelity     {fid:.6}")?;
        }
        for d in &self.diagnostics {
            writeln!(f, "note: {d}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct PointEstimate {
    mean: f64,
    variance: f64,
    r: f64,
    mu: Option<f64>,
}

fn point_estimate(shots: &[(u64, u64)], modes: ModeEstimator) -> PointEstimate {
    let n = shots.len() as f64;
    let (mut sum, mut sum_diff) = (0.0, 0.0);
    for &(s, t) in shots {
        sum += (s + t) as f64;
        sum_diff += s as f64 - t as f64;
    }
    let mean = sum / (2.0 * n);
    let mean_diff = sum_diff / n;
    let (mut var_pool, mut var_diff) = (0.0, 0.0);
    for &(s, t) in shots {
        var_pool += (s as f64 - mean).powi(2) + (t as f64 - mean).powi(2);
        var_diff += (s as f64 - t as f64 - mean_diff).powi(2);
    }
    let variance = var_pool / (2.0 * n - 1.0);
    let r = (var_diff / (n - 1.0)) / (2.0 * mean);
    let mu = match modes {
        ModeEstimator::Moments => (variance > mean).then(|| mean * mean / (variance - mean)),
        ModeEstimator::MaxLikelihood => max_likelihood_modes(shots, mean),
    };
    PointEstimate { mean, variance, r, mu }
}

/// Pooled log-likelihood of both arms under the multithermal marginal.
fn marginal_log_likelihood(tally: &[(u64, u64)], mean: f64, mu: f64) -> f64 {
    let ln_ratio = (mean / mu).ln();
    let ln_base = (mean / mu).ln_1p();
    tally
        .iter()
        .map(|&(k, count)| {
            let kf = k as f64;
            count as f64 * (log_binomial_unchecked(kf + mu - 1.0, k) + kf * ln_ratio - (kf + mu) * ln_base)
        })
        .sum()
}

/// Mode count maximizing the marginal likelihood at the sample mean, searched
/// over `[1, MU_SEARCH_MAX]`; `None` when the optimum runs off to infinity.
fn max_likelihood_modes(shots: &[(u64, u64)], mean: f64) -> Option<f64> {
    if mean == 0.0 {
        return None;
    }
    let len = shots.iter().map(|&(s, t)| s.max(t)).max().unwrap_or(0) as usize + 1;
    let mut counts = vec![0u64; len];
    for &(s, t) in shots {
        counts[s as usize] += 1;
        counts[t as usize] += 1;
    }
    let tally: Vec<(u64, u64)> =
        counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, &c)| (k as u64, c)).collect();
    let objective = |x: f64| marginal_log_likelihood(&tally, mean, x.exp());

    // coarse scan in log mu, then golden section around the best point
    let hi = MU_SEARCH_MAX.ln();
    let steps = 80;
    let grid: Vec<f64> = (0..=steps).map(|i| hi * i as f64 / steps as f64).collect();
    let best = grid.iter().enumerate().max_by(|a, b| objective(*a.1).total_cmp(&objective(*b.1))).map(|(i, _)| i)?;
    if best == steps {
        return None;
    }
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d);
        }
    }
    Some(((a + b) / 2.0).exp())
}

fn std_dev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    Some((xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Estimates `M` from the pooled mean, `eta` from the noise reduction and
/// `mu` from the marginal, with bootstrap standard errors.
pub fn estimate_params(record: &ShotRecord, options: &EstimateOptions) -> Result<EstimationReport> {
    let n = record.len();
    if n < MIN_SHOTS {
        return Err(Error::DegenerateRecord(format!("estimation needs >= {MIN_SHOTS} shots, got {n}")));
    }
    if record.shots.iter().all(|&(s, t)| s + t == 0) {
        return Err(Error::DegenerateRecord("no photoelectrons in either arm".into()));
    }
    let point = point_estimate(&record.shots, options.modes);
    let mut diagnostics = Vec::new();
    if point.mu.is_none() {
        diagnostics.push(format!(
            "count variance {:.6} does not exceed the mean {:.6}; the marginal is not multithermal and the mode count is unbounded",
            point.variance, point.mean
        ));
    }

    let resamples: Vec<PointEstimate> = (0..options.bootstrap as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = shot_rng(options.seed, BOOTSTRAP_STREAM_SALT | b);
            let sample: Vec<(u64, u64)> = (0..n).map(|_| record.shots[rng.random_range(0..n)]).collect();
            point_estimate(&sample, options.modes)
        })
        .collect();
    let pick = |f: fn(&PointEstimate) -> Option<f64>| -> Vec<f64> { resamples.iter().filter_map(f).collect() };
    let standard_errors = StandardErrors {
        mean: std_dev(&pick(|p| Some(p.mean))).unwrap_or(f64::NAN),
        eta: std_dev(&pick(|p| Some(p.r))).unwrap_or(f64::NAN),
        mu: std_dev(&pick(|p| p.mu)),
        noise_reduction: std_dev(&pick(|p| Some(p.r))).unwrap_or(f64::NAN),
    };

    let mut report = EstimationReport {
        shots: n,
        mean_hat: point.mean,
        eta_hat: 1.0 - point.r,
        mu_hat: point.mu,
        r_hat: point.r,
        fidelity: None,
        standard_errors,
        mode_estimator: options.modes,
        bootstrap: options.bootstrap,
        seed: options.seed,
        diagnostics,
    };
    if let Some(mu) = point.mu {
        if mu < 1.0 {
            report.diagnostics.push(format!("mode count {mu:.4} is below one; the model table uses one mode"));
        }
    }
    match report.params() {
        Some(params) => {
            let model = joint_table(&params, options.tol)?;
            report.fidelity = Some(fidelity(&model.probs, &histogram(record).joint().probs));
        }
        None if point.mu.is_some() => report
            .diagnostics
            .push(format!("efficiency estimate {:.6} lies outside (0, 1); no model table", report.eta_hat)),
        None => {}
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample_run, RecordMeta, TwinBeamSource};

    #[test]
    fn fidelity_identities() {
        let p = ProbTable::from_nested(&[vec![0.5, 0.25], vec![0.0, 0.25]]);
        assert_eq!(fidelity(&p, &p), 1.0);
        let half = ProbTable::from_nested(&[vec![0.25, 0.125], vec![0.0, 0.125]]);
        assert_eq!(fidelity(&p, &half), 1.0);
        let a = ProbTable::from_nested(&[vec![1.0]]);
        let b = ProbTable::from_nested(&[vec![0.0, 1.0]]);
        assert_eq!(fidelity(&a, &b), 0.0);
        assert_eq!(fidelity(&p, &a), fidelity(&a, &p));
    }

    #[test]
    fn correlated_record_has_no_difference_noise() {
        let shots = (0..50).map(|i| (i % 7, i % 7)).collect();
        let record = ShotRecord::new(shots, RecordMeta::Unknown).unwrap();
        assert_eq!(noise_reduction(&record).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_records_are_rejected() {
        let dark = ShotRecord::new(vec![(0, 0); 200], RecordMeta::Unknown).unwrap();
        assert!(matches!(noise_reduction(&dark), Err(Error::DegenerateRecord(_))));
        assert!(estimate_params(&dark, &EstimateOptions::default()).is_err());
        let short = ShotRecord::new(vec![(1, 2); 10], RecordMeta::Unknown).unwrap();
        assert!(estimate_params(&short, &EstimateOptions::default()).is_err());
        let one = ShotRecord::new(vec![(1, 2)], RecordMeta::Unknown).unwrap();
        assert!(noise_reduction(&one).is_err());
    }

    #[test]
    fn poissonian_counts_give_unbounded_modes() {
        // independent, nearly Poissonian arms: sums of many rare Bernoullis
        let source = TwinBeamSource::new(1, 2.0, 0.5).unwrap();
        let _ = source;
        let mut rng = shot_rng(5, 0);
        let shots: Vec<(u64, u64)> = (0..20_000)
            .map(|_| {
                let s = (0..400).filter(|_| rng.random::<f64>() < 0.01).count() as u64;
                let t = (0..400).filter(|_| rng.random::<f64>() < 0.01).count() as u64;
                (s, t)
            })
            .collect();
        let record = ShotRecord::new(shots, RecordMeta::Unknown).unwrap();
        let r = noise_reduction(&record).unwrap();
        assert!((r - 1.0).abs() < 0.05, "{r}");
        let options = EstimateOptions { bootstrap: 20, ..Default::default() };
        let report = estimate_params(&record, &options).unwrap();
        match report.mu_hat {
            None => assert!(report.diagnostics.iter().any(|d| d.contains("unbounded"))),
            // a finite but huge mode count is the other face of the same singularity
            Some(mu) => assert!(mu > 50.0),
        }
    }

    #[test]
    fn likelihood_and_moments_agree_on_large_samples() {
        let params = ExperimentParams::new(5.0, 0.3, 4.0).unwrap();
        let record = sample_run(&TwinBeamSource::from_params(&params).unwrap(), 40_000, 9).unwrap();
        let moments = point_estimate(&record.shots, ModeEstimator::Moments).mu.unwrap();
        let ml = point_estimate(&record.shots, ModeEstimator::MaxLikelihood).mu.unwrap();
        assert!((moments / 5.0 - 1.0).abs() < 0.15, "{moments}");
        assert!((ml / 5.0 - 1.0).abs() < 0.15, "{ml}");
    }

    #[test]
    fn report_keeps_r_and_eta_tied() {
        let params = ExperimentParams::new(3.0, 0.4, 3.0).unwrap();
        let record = sample_run(&TwinBeamSource::from_params(&params).unwrap(), 5_000, 1).unwrap();
        let report = estimate_params(&record, &EstimateOptions { bootstrap: 50, ..Default::default() }).unwrap();
        assert_eq!(report.r_hat, 1.0 - report.eta_hat);
        assert!(report.fidelity.unwrap() > 0.98 && report.fidelity.unwrap() <= 1.0 + 1e-12);
        let again = estimate_params(&record, &EstimateOptions { bootstrap: 50, ..Default::default() }).unwrap();
        assert_eq!(report, again);
    }
}
