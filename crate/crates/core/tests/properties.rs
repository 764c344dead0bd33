use proptest::prelude::*;

use photostat::conditioner::{cond_count_dist, conditional_mean, ConditionalState, SelectionRule};
use photostat::counting::{joint_prob, joint_table, marginal, marginal_distribution};
use photostat::distribution::ProbTable;
use photostat::inference::{estimate_params, fidelity, EstimateOptions};
use photostat::nongauss::{nongauss_report, thermal_entropy};
use photostat::sampler::{sample_run, TwinBeamSource};
use photostat::ExperimentParams;

fn params() -> impl Strategy<Value = ExperimentParams> {
    (1.0..60.0f64, 0.02..0.98f64, 0.0..15.0f64)
        .prop_map(|(mu, eta, mean)| ExperimentParams::new(mu, eta, mean).unwrap())
}

fn integer_params() -> impl Strategy<Value = ExperimentParams> {
    (1u32..40, 0.02..0.98f64, 0.1..15.0f64)
        .prop_map(|(mu, eta, mean)| ExperimentParams::new(mu as f64, eta, mean).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joint_is_symmetric(p in params(), s in 0u64..60, t in 0u64..60) {
        prop_assert_eq!(joint_prob(&p, s, t, 1e-12).unwrap(), joint_prob(&p, t, s, 1e-12).unwrap());
    }

    #[test]
    fn joint_table_is_consistent(p in params()) {
        let table = joint_table(&p, 1e-12).unwrap();
        let total = table.total();
        prop_assert!((total - 1.0).abs() <= 1e-9, "total {}", total);
        for (t, col) in table.probs.col_sums().iter().enumerate() {
            prop_assert!((col - marginal(&p, t as u64)).abs() <= 1e-8);
        }
        let m = table.probs.moments();
        prop_assert!((m.mean_s - p.mean()).abs() <= 1e-8);
        let var = p.mean() * (1.0 + p.mean() / p.mu());
        prop_assert!((m.var_s - var).abs() <= 1e-6 * var.max(1e-300));
        if p.mean() > 0.0 {
            prop_assert!((m.noise_reduction() - (1.0 - p.eta())).abs() <= 1e-6);
        }
    }

    #[test]
    fn conditional_state_is_consistent(p in params(), t in 0u64..30) {
        prop_assume!(marginal(&p, t) > 1e-12);
        let state = ConditionalState::new(&p, t, 1e-12).unwrap();
        let mt = conditional_mean(&p, t);
        prop_assert!((state.mass() - 1.0).abs() <= 1e-8);
        prop_assert!((state.photon_mean() - mt / p.eta()).abs() <= 1e-8 * (1.0 + mt / p.eta()));
        let counts = cond_count_dist(&p, &SelectionRule::Exact(t), 1e-12).unwrap();
        prop_assert!((counts.mean() - mt).abs() <= 1e-8 * (1.0 + mt));
        prop_assert!(mt - t as f64 * p.eta() > 0.0 || p.mean() == 0.0);
    }

    #[test]
    fn conditional_mean_is_affine_through_the_mean(p in params(), t in 0u64..200) {
        prop_assume!(p.mean() > 0.0);
        let (a, b) = (conditional_mean(&p, t), conditional_mean(&p, t + 1));
        prop_assert!(b > a);
        let tf = t as f64;
        if tf > p.mean() { prop_assert!(a > p.mean()); }
        if tf < p.mean() { prop_assert!(a < p.mean()); }
        let c = conditional_mean(&p, t + 2);
        prop_assert!(((c - b) - (b - a)).abs() <= 1e-12 * c.abs().max(1.0));
    }

    #[test]
    fn nongaussianity_is_bounded_and_base_free(p in params(), t in 0u64..25) {
        prop_assume!(p.mean() > 0.05 && marginal(&p, t) > 1e-12);
        let report = nongauss_report(&p, t, 1e-12).unwrap();
        prop_assert!(report.delta >= -1e-9, "delta {}", report.delta);
        prop_assert!(report.delta_r >= -1e-9 && report.delta_r <= 1.0);
        for base in [2.0, 10.0] {
            let other = report.in_base(base);
            prop_assert!((other.delta_r - report.delta_r).abs() <= 1e-12);
        }
    }

    #[test]
    fn thermal_entropy_is_additive(nbar in 0.0..50.0f64, mu in 1u32..300) {
        prop_assert_eq!(thermal_entropy(nbar, mu as f64), mu as f64 * thermal_entropy(nbar, 1.0));
    }

    #[test]
    fn fidelity_axioms(
        a in proptest::collection::vec(0.0..1.0f64, 1..30),
        b in proptest::collection::vec(0.0..1.0f64, 1..30),
        shift in (0usize..5, 0usize..5),
    ) {
        prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0);
        let table = |v: &[f64], (ds, dt): (usize, usize)| {
            let mut t = ProbTable::zeros(6 + ds, 5 + dt);
            for (i, &x) in v.iter().enumerate() {
                t.set(i / 5 + ds, i % 5 + dt, x);
            }
            t
        };
        let (p, q) = (table(&a, (0, 0)), table(&b, (0, 0)));
        let f = fidelity(&p, &q);
        prop_assert_eq!(f, fidelity(&q, &p));
        prop_assert!((0.0..=1.0 + 1e-15).contains(&f));
        prop_assert!((fidelity(&p, &p) - 1.0).abs() <= 1e-15);
        let shifted = fidelity(&table(&a, shift), &table(&b, shift));
        prop_assert!((shifted - f).abs() <= 1e-15);
    }

    #[test]
    fn sampling_ignores_thread_count(p in integer_params(), seed in any::<u64>()) {
        let source = TwinBeamSource::from_params(&p).unwrap();
        let many = sample_run(&source, 2000, seed).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = pool.install(|| sample_run(&source, 2000, seed)).unwrap();
        prop_assert_eq!(many, one);
    }
}

#[test]
fn mixture_of_conditionals_is_the_marginal() {
    let p = ExperimentParams::new(4.0, 0.3, 3.0).unwrap();
    let marginal_dist = marginal_distribution(&p, 1e-14).unwrap();
    let mut mixed = vec![0.0; 80];
    for t in 0..marginal_dist.len() as u64 {
        let weight = marginal(&p, t);
        if weight < 1e-300 {
            continue;
        }
        let counts = cond_count_dist(&p, &SelectionRule::Exact(t), 1e-14).unwrap();
        for (s, x) in counts.probs().iter().enumerate().take(80) {
            mixed[s] += weight * x;
        }
    }
    for (s, &x) in mixed.iter().enumerate() {
        assert!((x - marginal(&p, s as u64)).abs() <= 1e-9, "s={s}: {x} vs {}", marginal(&p, s as u64));
    }
}

#[test]
fn post_selection_reproduces_conditional_distribution() {
    let p = ExperimentParams::new(5.0, 0.4, 3.0).unwrap();
    let record = sample_run(&TwinBeamSource::from_params(&p).unwrap(), 200_000, 21).unwrap();
    for rule in [SelectionRule::Exact(3), SelectionRule::Above(4), SelectionRule::Below(2)] {
        let selected = record.post_select(&rule);
        let n = selected.len() as f64;
        let model = cond_count_dist(&p, &rule, 1e-12).unwrap();
        for s in 0..12 {
            let observed = selected.iter().filter(|&&x| x == s as u64).count() as f64 / n;
            let expected = model.get(s);
            let se = (expected * (1.0 - expected) / n).sqrt();
            assert!((observed - expected).abs() <= 5.0 * se + 1e-12, "{rule} s={s}: {observed} vs {expected}");
        }
    }
}

#[test]
fn estimates_tighten_with_more_shots() {
    let p = ExperimentParams::new(10.0, 0.3, 5.0).unwrap();
    let source = TwinBeamSource::from_params(&p).unwrap();
    let spreads: Vec<(f64, f64, f64)> = [1_000u64, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let record = sample_run(&source, n, 4).unwrap();
            let options = EstimateOptions { bootstrap: 100, seed: 4, ..Default::default() };
            let se = estimate_params(&record, &options).unwrap().standard_errors;
            (se.mean, se.eta, se.mu.unwrap_or(f64::INFINITY))
        })
        .collect();
    for w in spreads.windows(2) {
        assert!(w[1].0 < w[0].0 && w[1].1 < w[0].1 && w[1].2 < w[0].2, "{spreads:?}");
    }
    // roughly 1/sqrt(n): a tenfold increase cuts the spread by about 3.2
    let ratio = spreads[1].1 / spreads[2].1;
    assert!((2.0..5.0).contains(&ratio), "{ratio}");
}
