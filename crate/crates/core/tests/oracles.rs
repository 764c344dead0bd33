//! Closed forms against independent constructions.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

use photostat::combinatorics::log_binomial;
use photostat::conditioner::{cond_count_dist, ConditionalState, SelectionRule};
use photostat::counting::{joint_prob, joint_table};
use photostat::nongauss::entropy_conditional;
use photostat::oracle::{brute_force_joint, oracle_cutoff};
use photostat::ExperimentParams;

fn exact_binomial(n: u64, k: u64) -> BigUint {
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn ln_big(x: &BigUint) -> f64 {
    // ln of a big integer from its top 64 bits
    let bits = x.bits();
    if bits <= 64 {
        return x.to_f64().unwrap().ln();
    }
    let shift = bits - 64;
    (x >> shift).to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

#[test]
fn log_binomial_matches_exact_integers() {
    for (n, k) in [
        (246, 50),
        (1000, 500),
        (60, 30),
        (5000, 17),
        (20, 0),
        (20, 20),
        (100_000, 3),
        (1_000_000, 2),
        (5000, 4990),
        (3000, 2999),
    ] {
        let want = ln_big(&exact_binomial(n, k));
        let got = log_binomial(n as f64, k).unwrap();
        assert!((got - want).abs() <= 1e-14 * want.max(1.0), "C({n},{k}): {got} vs {want}");
    }
}

#[test]
fn series_matches_fock_space_construction() {
    let (mu, eta, photons) = (2, 0.5, 1.0 / 0.5);
    let params = ExperimentParams::new(mu as f64, eta, eta * photons).unwrap();
    let oracle = brute_force_joint(mu, photons, eta, oracle_cutoff(mu, photons)).unwrap();
    for s in 0..25 {
        for t in 0..25 {
            let p = joint_prob(&params, s as u64, t as u64, 1e-15).unwrap();
            assert!((p - oracle.get(s, t)).abs() <= 1e-12, "({s},{t}) {p} vs {}", oracle.get(s, t));
        }
    }
    let table = joint_table(&params, 1e-13).unwrap();
    assert!((table.total() - oracle.total()).abs() < 1e-11);
}

/// Multi-index posterior of the signal modes after `t` idler counts,
/// enumerated mode by mode: `(photon numbers, eigenvalue)`.
fn brute_force_posterior(mu: usize, photons: f64, eta: f64, t: usize, cutoff: usize) -> Vec<(Vec<usize>, f64)> {
    let x = (photons / mu as f64) / (1.0 + photons / mu as f64);
    let thin = |n: usize, k: usize| -> f64 {
        if k > n {
            return 0.0;
        }
        let mut c = 1.0;
        for i in 0..k {
            c = c * (n - i) as f64 / (i + 1) as f64;
        }
        c * eta.powi(k as i32) * (1.0 - eta).powi((n - k) as i32)
    };
    let mut states = Vec::new();
    let mut index = vec![0usize; mu];
    loop {
        let prior: f64 = index.iter().map(|&n| (1.0 - x) * x.powi(n as i32)).product();
        // idler detections summed mode by mode
        let mut dist = vec![1.0];
        for &n in &index {
            let mut next = vec![0.0; dist.len() + n];
            for (a, &pa) in dist.iter().enumerate() {
                for k in 0..=n {
                    next[a + k] += pa * thin(n, k);
                }
            }
            dist = next;
        }
        let likelihood = dist.get(t).copied().unwrap_or(0.0);
        states.push((index.clone(), prior * likelihood));
        let mut m = 0;
        loop {
            if m == mu {
                let evidence: f64 = states.iter().map(|s| s.1).sum();
                return states.into_iter().map(|(n, w)| (n, w / evidence)).collect();
            }
            index[m] += 1;
            if index[m] <= cutoff {
                break;
            }
            index[m] = 0;
            m += 1;
        }
    }
}

#[test]
fn conditional_state_matches_bayes_posterior() {
    for (mu, eta, photons, t) in [(1, 0.5, 2.0, 0), (2, 0.3, 1.5, 2), (3, 0.6, 1.0, 1), (3, 0.2, 2.0, 3)] {
        let params = ExperimentParams::new(mu as f64, eta, eta * photons).unwrap();
        let cutoff = match mu {
            1 => 120,
            2 => 70,
            _ => 40,
        };
        let posterior = brute_force_posterior(mu, photons, eta, t, cutoff);
        let state = ConditionalState::new(&params, t as u64, 1e-14).unwrap();
        for (n, w) in posterior.iter().filter(|(_, w)| *w > 1e-12) {
            let gamma: usize = n.iter().sum();
            let got = state.weight(gamma as u64);
            assert!((got - w).abs() <= 1e-12 + 1e-9 * w, "mu={mu} t={t} n={n:?}: {got} vs {w}");
        }

        // signal counts: thin the total photon number of each multi-index
        let counts = cond_count_dist(&params, &SelectionRule::Exact(t as u64), 1e-14).unwrap();
        for s in 0..15usize {
            let want: f64 = posterior
                .iter()
                .map(|(n, w)| {
                    let g: usize = n.iter().sum();
                    if s > g {
                        return 0.0;
                    }
                    let mut c = 1.0;
                    for i in 0..s {
                        c = c * (g - i) as f64 / (i + 1) as f64;
                    }
                    w * c * eta.powi(s as i32) * (1.0 - eta).powi((g - s) as i32)
                })
                .sum();
            assert!((counts.get(s) - want).abs() <= 1e-11, "mu={mu} t={t} s={s}: {} vs {want}", counts.get(s));
        }

        let entropy: f64 = posterior.iter().filter(|(_, w)| *w > 0.0).map(|(_, w)| -w * w.ln()).sum();
        let estimate = entropy_conditional(&state).unwrap();
        assert!((estimate.value - entropy).abs() <= 1e-9, "mu={mu} t={t}: {} vs {entropy}", estimate.value);
    }
}

#[test]
fn single_mode_vacuum_conditioning_entropy() {
    // one mode, no idler click: geometric posterior with ratio x (1 - eta)
    let (eta, photons) = (0.5, 2.0);
    let params = ExperimentParams::new(1.0, eta, eta * photons).unwrap();
    let q = photons / (1.0 + photons) * (1.0 - eta);
    let want = -((1.0 - q).ln() + q / (1.0 - q) * q.ln());
    let got = entropy_conditional(&ConditionalState::new(&params, 0, 1e-14).unwrap()).unwrap();
    assert!((got.value - want).abs() < 1e-12, "{} vs {want}", got.value);
}
