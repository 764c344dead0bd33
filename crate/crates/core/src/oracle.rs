//! Direct Fock-space construction of the joint count distribution.
//!
//! Nothing here shares code with the closed-form series: photon numbers are
//! enumerated per mode, each arm is thinned by a binomial built from Pascal's
//! rule in linear space, and the modes are combined by 2-D convolution.

use crate::distribution::{JointDistribution, ProbTable, Provenance};
use crate::error::{invalid, Result};

/// Largest mode count the brute-force construction accepts.
pub const MAX_ORACLE_MODES: u32 = 4;

/// Largest omitted photon mass tolerated by the brute-force construction.
pub const MAX_ORACLE_TAIL: f64 = 1e-12;

/// Omitted mass when every mode is truncated at `photon_cutoff` photons.
pub fn oracle_tail(mu: u32, photons: f64, photon_cutoff: usize) -> f64 {
    let per_mode = photons / mu as f64;
    let lambda_sq = per_mode / (1.0 + per_mode);
    mu as f64 * lambda_sq.powi(photon_cutoff as i32 + 1)
}

/// Smallest per-mode photon cutoff meeting [`MAX_ORACLE_TAIL`].
pub fn oracle_cutoff(mu: u32, photons: f64) -> usize {
    let mut cutoff = 0;
    while oracle_tail(mu, photons, cutoff) > MAX_ORACLE_TAIL {
        cutoff += 1;
    }
    cutoff
}

/// Joint distribution of `mu` identical twin beams with `photons` total
/// mean photons per beam, each arm detected with efficiency `eta` in `(0, 1]`.
pub fn brute_force_joint(mu: u32, photons: f64, eta: f64, photon_cutoff: usize) -> Result<JointDistribution> {
    if mu == 0 || mu > MAX_ORACLE_MODES {
        return Err(invalid(format!("oracle supports 1..={MAX_ORACLE_MODES} modes, got {mu}")));
    }
    if !photons.is_finite() || photons < 0.0 {
        return Err(invalid(format!("mean photon number must be >= 0, got {photons}")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid(format!("oracle efficiency must lie in (0, 1], got {eta}")));
    }
    let tail = oracle_tail(mu, photons, photon_cutoff);
    if tail > MAX_ORACLE_TAIL {
        return Err(invalid(format!(
            "photon cutoff {photon_cutoff} leaves {tail:e} of the mass, above {MAX_ORACLE_TAIL:e}"
        )));
    }

    let per_mode = photons / mu as f64;
    let lambda_sq = per_mode / (1.0 + per_mode);
    let photon_probs: Vec<f64> = (0..=photon_cutoff).map(|n| (1.0 - lambda_sq) * lambda_sq.powi(n as i32)).collect();

    // thinning[n][k] = C(n,k) eta^k (1-eta)^(n-k)
    let mut thinning = vec![vec![1.0]];
    for n in 1..=photon_cutoff {
        let prev = &thinning[n - 1];
        let row: Vec<f64> = (0..=n)
            .map(|k| {
                let keep = if k > 0 { eta * prev[k - 1] } else { 0.0 };
                let lose = if k < n { (1.0 - eta) * prev[k] } else { 0.0 };
                keep + lose
            })
            .collect();
        thinning.push(row);
    }

    let size = photon_cutoff + 1;
    let mut single = ProbTable::zeros(size, size);
    for (n, &pn) in photon_probs.iter().enumerate() {
        let row = &thinning[n];
        for s in 0..=n {
            for t in 0..=n {
                single.set(s, t, single.get(s, t) + pn * row[s] * row[t]);
            }
        }
    }

    let mut joint = single.clone();
    for _ in 1..mu {
        joint = convolve(&joint, &single);
    }
    Ok(JointDistribution {
        probs: joint,
        tail_bound: tail,
        tol: MAX_ORACLE_TAIL,
        provenance: Provenance::BruteForce { mu, photons, eta, photon_cutoff },
    })
}

fn convolve(a: &ProbTable, b: &ProbTable) -> ProbTable {
    let rows = a.rows() + b.rows() - 1;
    let cols = a.cols() + b.cols() - 1;
    let mut out = ProbTable::zeros(rows, cols);
    for (s1, t1, pa) in a.cells() {
        if pa == 0.0 {
            continue;
        }
        for (s2, t2, pb) in b.cells() {
            let (s, t) = (s1 + s2, t1 + t2);
            out.set(s, t, out.get(s, t) + pa * pb);
        }
    }
    out
}
