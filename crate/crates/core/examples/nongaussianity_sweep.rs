//! Renormalized nonGaussianity of conditional states along each parameter axis.

use photostat::nongauss::{nongauss_report, sweep, Energy, SweepAxis, SweepSpec};
use photostat::ExperimentParams;

fn show(title: &str, spec: SweepSpec) -> photostat::Result<()> {
    println!("{title}");
    for row in sweep(&spec)? {
        println!("  {:>4} = {:<6}  delta_R = {:.6e}", row.axis.name(), row.value, row.report.delta_r);
    }
    Ok(())
}

fn main() -> photostat::Result<()> {
    let base = SweepSpec {
        axis: SweepAxis::T,
        values: vec![],
        mu: 25.0,
        eta: 0.1,
        t: 5,
        energy: Energy::ConditionalMean(4.0),
        tol: 1e-12,
    };
    show("against t at M_t = 4", SweepSpec { values: vec![5.0, 8.0, 11.0, 14.0, 17.0], ..base.clone() })?;
    show(
        "against eta at M_t = 4, t = 5",
        SweepSpec { axis: SweepAxis::Eta, values: vec![0.06, 0.08, 0.1, 0.2], ..base.clone() },
    )?;
    show(
        "against mu at M_t = 4, t = 5",
        SweepSpec { axis: SweepAxis::Mu, values: vec![1.0, 5.0, 25.0, 100.0, 197.0], ..base.clone() },
    )?;
    show("against M_t at t = 5", SweepSpec { axis: SweepAxis::Mt, values: vec![2.0, 3.0, 4.0, 5.0], ..base })?;

    // almost blind conditioning leaves a thermal, hence Gaussian, state
    let report = nongauss_report(&ExperimentParams::new(25.0, 1e-6, 17.1)?, 3, 1e-12)?;
    println!("eta = 1e-6, t = 3: delta_R = {:e}", report.delta_r);
    Ok(())
}
