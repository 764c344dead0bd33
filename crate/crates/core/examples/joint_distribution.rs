//! Joint photoelectron distribution, its marginals and the noise reduction.
//!
//! cargo run --example joint_distribution -- 197 0.06 13.4

use photostat::counting::{joint_prob, joint_table, marginal};
use photostat::ExperimentParams;

fn main() -> photostat::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let (mu, eta, mean) = match args[..] {
        [mu, eta, mean] => (mu, eta, mean),
        _ => (197.0, 0.06, 13.4),
    };
    let params = ExperimentParams::new(mu, eta, mean)?;
    let joint = joint_table(&params, 1e-12)?;

    println!("mu={mu} eta={eta} M={mean}");
    println!(
        "table {}x{}, mass {:.15}, tail bound {:e}",
        joint.s_max() + 1,
        joint.t_max() + 1,
        joint.total(),
        joint.tail_bound
    );

    let m = joint.probs.moments();
    println!("<s>={:.10} <t>={:.10} var={:.6} cov={:.6}", m.mean_s, m.mean_t, m.var_s, m.cov);
    println!("noise reduction R={:.10} (1-eta={})", m.noise_reduction(), 1.0 - eta);

    // marginal of the table against the closed form
    let cols = joint.probs.col_sums();
    let worst = cols.iter().enumerate().map(|(t, &p)| (p - marginal(&params, t as u64)).abs()).fold(0.0, f64::max);
    println!("max |column sum - marginal| = {worst:e}");

    for (s, t) in [(0, 0), (10, 10), (10, 15), (30, 5)] {
        println!("p({s},{t}) = {:e}", joint_prob(&params, s, t, 1e-14)?);
    }
    Ok(())
}
