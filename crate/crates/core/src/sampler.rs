//! Synthetic shot records drawn from the physical model.
//!
//! Each mode emits a geometric number of photon pairs; both arms then lose
//! photons independently with probability `1 - eta`. Every shot draws from its
//! own ChaCha stream keyed by `(seed, shot index)`, so a run is reproducible
//! bit for bit regardless of how shots are spread over threads.

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::log_binomial_unchecked;
use crate::conditioner::SelectionRule;
use crate::distribution::{JointDistribution, PhotoCountDistribution, ProbTable, Provenance};
use crate::error::{invalid, Result};
use crate::params::ExperimentParams;

/// Below this many trials binomials are drawn as explicit Bernoulli sums.
const BERNOULLI_LIMIT: u64 = 64;

/// Integer-mode twin-beam source seen through detectors of efficiency `eta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinBeamSource {
    pub modes: u32,
    /// Mean photons per beam, summed over modes.
    pub photons: f64,
    /// Detection efficiency in `(0, 1]`.
    pub eta: f64,
}

impl TwinBeamSource {
    pub fn new(modes: u32, photons: f64, eta: f64) -> Result<Self> {
        if modes == 0 {
            return Err(invalid("sampling needs at least one mode"));
        }
        if !photons.is_finite() || photons < 0.0 {
            return Err(invalid(format!("mean photon number must be >= 0, got {photons}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(invalid(format!("detection efficiency must lie in (0, 1], got {eta}")));
        }
        Ok(TwinBeamSource { modes, photons, eta })
    }

    /// Requires an integer mode count.
    pub fn from_params(params: &ExperimentParams) -> Result<Self> {
        let modes = params
            .integer_modes()
            .ok_or_else(|| invalid(format!("sampling needs an integer mode count, got {}", params.mu())))?;
        Self::new(modes, params.photons(), params.eta())
    }

    /// Mean photoelectrons per beam.
    pub fn mean(&self) -> f64 {
        self.eta * self.photons
    }

    /// Per-mode ratio `lambda^2` of the geometric photon-pair law.
    fn pair_ratio(&self) -> f64 {
        let per_mode = self.photons / self.modes as f64;
        per_mode / (1.0 + per_mode)
    }
}

/// RNG for shot `index` of a run seeded with `seed`.
pub fn shot_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Geometric count with `P(n) = (1 - q) q^n`, by inversion.
fn geometric<R: Rng + ?Sized>(rng: &mut R, ratio: f64) -> u64 {
    if ratio == 0.0 {
        return 0;
    }
    // uniform on (0, 1]
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / ratio.ln()).floor() as u64
}

/// Binomial count: Bernoulli sums for few trials, inversion from the mode otherwise.
fn binomial<R: Rng + ?Sized>(rng: &mut R, trials: u64, p: f64) -> u64 {
    if p >= 1.0 {
        return trials;
    }
    if trials < BERNOULLI_LIMIT {
        return (0..trials).filter(|_| rng.random::<f64>() < p).count() as u64;
    }
    let n = trials as f64;
    let mode = (((n + 1.0) * p).floor() as u64).min(trials);
    let ln_mode = log_binomial_unchecked(n, mode) + mode as f64 * p.ln() + (trials - mode) as f64 * (-p).ln_1p();
    let odds = p / (1.0 - p);
    let mut u = rng.random::<f64>();
    let p_mode = ln_mode.exp();
    u -= p_mode;
    if u < 0.0 {
        return mode;
    }
    let (mut lo, mut hi) = (mode, mode);
    let (mut p_lo, mut p_hi) = (p_mode, p_mode);
    loop {
        if lo > 0 {
            p_lo *= lo as f64 / ((trials - lo + 1) as f64 * odds);
            lo -= 1;
            u -= p_lo;
            if u < 0.0 {
                return lo;
            }
        }
        if hi < trials {
            p_hi *= (trials - hi) as f64 / (hi + 1) as f64 * odds;
            hi += 1;
            u -= p_hi;
            if u < 0.0 {
                return hi;
            }
        }
        if lo == 0 && hi == trials {
            // rounding left a sliver of unassigned probability
            return mode;
        }
    }
}

/// One laser shot: `(signal, idler)` photoelectron counts.
///
/// The per-mode binomial losses are pooled into one binomial per arm, which
/// has the same law since every photon is lost independently.
pub fn sample_shot<R: Rng + ?Sized>(source: &TwinBeamSource, rng: &mut R) -> (u64, u64) {
    let ratio = source.pair_ratio();
    let photons: u64 = (0..source.modes).map(|_| geometric(rng, ratio)).sum();
    let s = binomial(rng, photons, source.eta);
    let t = binomial(rng, photons, source.eta);
    (s, t)
}

/// Where a shot record came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum RecordMeta {
    Synthetic { model: TwinBeamSource, seed: u64 },
    File { path: PathBuf },
    Unknown,
}

/// Per-shot `(s, t)` counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub shots: Vec<(u64, u64)>,
    pub meta: RecordMeta,
}

impl ShotRecord {
    pub fn new(shots: Vec<(u64, u64)>, meta: RecordMeta) -> Result<Self> {
        if shots.is_empty() {
            return Err(invalid("a shot record needs at least one shot"));
        }
        Ok(ShotRecord { shots, meta })
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    /// Signal counts of the shots whose idler count passes `rule`.
    pub fn post_select(&self, rule: &SelectionRule) -> Vec<u64> {
        self.shots.iter().filter(|(_, t)| rule.accepts(*t)).map(|&(s, _)| s).collect()
    }
}

/// Draws `n_shots` shots; identical for identical `(source, n_shots, seed)`.
pub fn sample_run(source: &TwinBeamSource, n_shots: u64, seed: u64) -> Result<ShotRecord> {
    if n_shots == 0 {
        return Err(invalid("n_shots must be >= 1"));
    }
    let shots = (0..n_shots).into_par_iter().map(|i| sample_shot(source, &mut shot_rng(seed, i))).collect();
    ShotRecord::new(shots, RecordMeta::Synthetic { model: *source, seed })
}

/// Frequency table of a shot record.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    shots: u64,
}

impl Histogram {
    pub fn count(&self, s: usize, t: usize) -> u64 {
        if s < self.rows && t < self.cols {
            self.counts[s * self.cols + t]
        } else {
            0
        }
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    /// Normalized frequencies as a joint table.
    pub fn joint(&self) -> JointDistribution {
        let mut probs = ProbTable::zeros(self.rows, self.cols);
        let n = self.shots as f64;
        for s in 0..self.rows {
            for t in 0..self.cols {
                probs.set(s, t, self.count(s, t) as f64 / n);
            }
        }
        JointDistribution { probs, tail_bound: 0.0, tol: 0.0, provenance: Provenance::Empirical { shots: self.shots } }
    }
}

/// Tallies the record into a dense `(s, t)` table.
pub fn histogram(record: &ShotRecord) -> Histogram {
    let rows = record.shots.iter().map(|&(s, _)| s).max().unwrap_or(0) as usize + 1;
    let cols = record.shots.iter().map(|&(_, t)| t).max().unwrap_or(0) as usize + 1;
    let mut counts = vec![0u64; rows * cols];
    for &(s, t) in &record.shots {
        counts[s as usize * cols + t as usize] += 1;
    }
    Histogram { rows, cols, counts, shots: record.shots.len() as u64 }
}

/// Normalized histogram of single counts.
pub fn count_histogram(counts: &[u64]) -> PhotoCountDistribution {
    let len = counts.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut tally = vec![0u64; len];
    for &c in counts {
        tally[c as usize] += 1;
    }
    let n = counts.len() as f64;
    PhotoCountDistribution::new(tally.into_iter().map(|k| k as f64 / n).collect(), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dark_source_always_gives_zero() {
        let source = TwinBeamSource::new(3, 0.0, 0.5).unwrap();
        let record = sample_run(&source, 1000, 1).unwrap();
        assert!(record.shots.iter().all(|&shot| shot == (0, 0)));
    }

    #[test]
    fn perfect_detection_is_perfectly_correlated() {
        let source = TwinBeamSource::new(1, 4.0, 1.0).unwrap();
        let record = sample_run(&source, 5000, 3).unwrap();
        assert!(record.shots.iter().all(|&(s, t)| s == t));
        assert!(record.shots.iter().any(|&(s, _)| s > 0));
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let source = TwinBeamSource::new(25, 17.1 / 0.056, 0.056).unwrap();
        let a = sample_run(&source, 2000, 11).unwrap();
        let b = sample_run(&source, 2000, 11).unwrap();
        let c = sample_run(&source, 2000, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.shots, c.shots);
    }

    #[test]
    fn shot_streams_are_independent_of_run_length() {
        let source = TwinBeamSource::new(2, 3.0, 0.5).unwrap();
        let short = sample_run(&source, 10, 5).unwrap();
        let long = sample_run(&source, 100, 5).unwrap();
        assert_eq!(short.shots[..], long.shots[..10]);
    }

    #[test]
    fn binomial_inversion_matches_moments() {
        let mut rng = shot_rng(99, 0);
        let (n, p) = (400u64, 0.3);
        let draws: Vec<f64> = (0..40_000).map(|_| binomial(&mut rng, n, p) as f64).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let (m0, v0) = (n as f64 * p, n as f64 * p * (1.0 - p));
        assert!((mean - m0).abs() < 5.0 * (v0 / draws.len() as f64).sqrt());
        assert!((var / v0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn geometric_inversion_mean() {
        let mut rng = shot_rng(7, 1);
        let q: f64 = 0.8;
        let mean = (0..100_000).map(|_| geometric(&mut rng, q) as f64).sum::<f64>() / 100_000.0;
        let expected = q / (1.0 - q);
        assert!((mean - expected).abs() < 0.1, "{mean}");
    }

    #[test]
    fn histogram_basics() {
        let single = ShotRecord::new(vec![(2, 3)], RecordMeta::Unknown).unwrap();
        let h = histogram(&single);
        assert_eq!(h.joint().get(2, 3), 1.0);
        assert_eq!(h.joint().total(), 1.0);

        let source = TwinBeamSource::new(2, 3.0, 0.4).unwrap();
        let mut record = sample_run(&source, 500, 2).unwrap();
        let forward = histogram(&record);
        record.shots.reverse();
        assert_eq!(histogram(&record), forward);
    }

    #[test]
    fn rejects_invalid_sources() {
        assert!(TwinBeamSource::new(0, 1.0, 0.5).is_err());
        assert!(TwinBeamSource::new(1, -1.0, 0.5).is_err());
        assert!(TwinBeamSource::new(1, 1.0, 0.0).is_err());
        let p = ExperimentParams::new(2.5, 0.5, 1.0).unwrap();
        assert!(TwinBeamSource::from_params(&p).is_err());
        assert!(sample_run(&TwinBeamSource::new(1, 1.0, 0.5).unwrap(), 0, 1).is_err());
    }
}
