//! Signal states prepared by counting idler photoelectrons.

use photostat::conditioner::{build_conditional, cond_count_dist, conditional_mean, ConditionalState, SelectionRule};
use photostat::ExperimentParams;

fn main() -> photostat::Result<()> {
    let params = ExperimentParams::new(197.0, 0.06, 13.4)?;
    let tol = 1e-12;

    println!("unconditioned mean {}", params.mean());
    for t in [0, 10, 15, 30] {
        let state = ConditionalState::new(&params, t, tol)?;
        println!(
            "t={t:2}  M_t={:.10}  support gamma in [{}, {}]  mass={:.12}",
            conditional_mean(&params, t),
            state.gamma_min(),
            state.gamma_max(),
            state.mass()
        );
    }

    let rules =
        [SelectionRule::Exact(10), SelectionRule::Above(11), SelectionRule::Below(8), SelectionRule::set(vec![5, 20])?];
    for rule in rules {
        let cond = build_conditional(&params, &rule, tol)?;
        // Bayes and POVM routes are cross-checked inside
        let dist = cond_count_dist(&params, &rule, tol)?;
        println!(
            "{rule:8}  acceptance={:.6}  mean={:.8}  distribution mean={:.8}  mode={}",
            cond.acceptance(),
            cond.conditional_mean(),
            dist.mean(),
            dist.probs().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
        );
    }
    Ok(())
}
