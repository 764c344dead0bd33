use serde::{Deserialize, Serialize};

use crate::params::ExperimentParams;

/// Dense two-dimensional probability table indexed by `(s, t)` from `(0, 0)`.
///
/// Reads outside the stored range return zero, so tables of different
/// extents compare as if zero-padded to their union.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbTable {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ProbTable { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a table from row-major nested vectors; rows may be ragged.
    pub fn from_nested(rows: &[Vec<f64>]) -> Self {
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut table = ProbTable::zeros(rows.len(), cols);
        for (s, row) in rows.iter().enumerate() {
            for (t, &p) in row.iter().enumerate() {
                table.set(s, t, p);
            }
        }
        table
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        if s < self.rows && t < self.cols {
            self.data[s * self.cols + t]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, s: usize, t: usize, p: f64) {
        assert!(s < self.rows && t < self.cols, "({s}, {t}) outside {}x{}", self.rows, self.cols);
        self.data[s * self.cols + t] = p;
    }

    pub fn total(&self) -> f64 {
        let mut sorted = self.data.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        sorted.iter().sum()
    }

    /// `p_1(s) = sum_t p(s, t)`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|s| self.data[s * self.cols..(s + 1) * self.cols].iter().sum()).collect()
    }

    /// `p_2(t) = sum_s p(s, t)`.
    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|t| (0..self.rows).map(|s| self.get(s, t)).sum()).collect()
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[f64]>::to_vec).collect()
    }

    /// Iterates over every stored cell as `(s, t, p)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |s| (0..self.cols).map(move |t| (s, t, self.get(s, t))))
    }

    pub fn moments(&self) -> JointMoments {
        let mut m = JointMoments::default();
        let mut mass = 0.0;
        for (s, t, p) in self.cells() {
            let (s, t) = (s as f64, t as f64);
            mass += p;
            m.mean_s += s * p;
            m.mean_t += t * p;
        }
        m.mean_s /= mass;
        m.mean_t /= mass;
        for (s, t, p) in self.cells() {
            let ds = s as f64 - m.mean_s;
            let dt = t as f64 - m.mean_t;
            m.var_s += ds * ds * p;
            m.var_t += dt * dt * p;
            m.cov += ds * dt * p;
        }
        m.var_s /= mass;
        m.var_t /= mass;
        m.cov /= mass;
        m
    }
}

/// First and second moments of a joint table (normalized by its own mass).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointMoments {
    pub mean_s: f64,
    pub mean_t: f64,
    pub var_s: f64,
    pub var_t: f64,
    pub cov: f64,
}

impl JointMoments {
    /// `var(s - t) / <s + t>`.
    pub fn noise_reduction(&self) -> f64 {
        (self.var_s + self.var_t - 2.0 * self.cov) / (self.mean_s + self.mean_t)
    }
}

/// Truncated distribution over a single photoelectron count.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotoCountDistribution {
    probs: Vec<f64>,
    tail_bound: f64,
    mean: f64,
}

impl PhotoCountDistribution {
    pub fn new(probs: Vec<f64>, tail_bound: f64) -> Self {
        debug_assert!(probs.iter().all(|&p| p >= 0.0));
        let mean = probs.iter().enumerate().map(|(k, &p)| k as f64 * p).sum();
        PhotoCountDistribution { probs, tail_bound, mean }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Upper bound on the probability mass beyond the stored counts.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// First moment of the stored counts.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        let total = self.total();
        let mean = self.mean / total;
        self.probs.iter().enumerate().map(|(k, &p)| (k as f64 - mean).powi(2) * p).sum::<f64>() / total
    }
}

/// Where a joint table came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    /// The closed-form series at these parameters.
    Model { params: ExperimentParams },
    /// Direct Fock-space construction with integer modes, possibly at unit efficiency.
    BruteForce { mu: u32, photons: f64, eta: f64, photon_cutoff: usize },
    /// Normalized histogram of a shot record.
    Empirical { shots: u64 },
    /// Read from a file that did not say.
    Unknown,
}

impl Provenance {
    pub fn params(&self) -> Option<ExperimentParams> {
        match self {
            Provenance::Model { params } => Some(*params),
            _ => None,
        }
    }
}

/// Truncated joint distribution `p_12(s, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    pub probs: ProbTable,
    /// Upper bound on the mass omitted by truncation.
    pub tail_bound: f64,
    pub tol: f64,
    pub provenance: Provenance,
}

impl JointDistribution {
    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.probs.get(s, t)
    }

    pub fn total(&self) -> f64 {
        self.probs.total()
    }

    pub fn s_max(&self) -> usize {
        self.probs.rows().saturating_sub(1)
    }

    pub fn t_max(&self) -> usize {
        self.probs.cols().saturating_sub(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_reads_are_zero() {
        let t = ProbTable::from_nested(&[vec![0.5, 0.25], vec![0.25]]);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 2);
        assert_eq!(t.get(1, 1), 0.0);
        assert_eq!(t.get(7, 0), 0.0);
        assert_eq!(t.total(), 1.0);
        assert_eq!(t.row_sums(), vec![0.75, 0.25]);
        assert_eq!(t.col_sums(), vec![0.75, 0.25]);
    }

    #[test]
    fn moments_of_perfectly_correlated_table() {
        let t = ProbTable::from_nested(&[vec![0.5, 0.0], vec![0.0, 0.5]]);
        let m = t.moments();
        assert_eq!(m.mean_s, 0.5);
        assert_eq!(m.var_s, 0.25);
        assert_eq!(m.cov, 0.25);
        assert_eq!(m.noise_reduction(), 0.0);
    }

    #[test]
    fn count_distribution_moments() {
        let d = PhotoCountDistribution::new(vec![0.25, 0.5, 0.25], 0.0);
        assert_eq!(d.mean(), 1.0);
        assert_eq!(d.variance(), 0.5);
        assert_eq!(d.get(9), 0.0);
    }
}
