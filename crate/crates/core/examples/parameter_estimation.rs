//! Recovering (mu, eta, M) from a synthetic run.

use photostat::inference::{estimate_params, EstimateOptions, ModeEstimator};
use photostat::sampler::{sample_run, TwinBeamSource};
use photostat::ExperimentParams;

fn main() -> photostat::Result<()> {
    let truth = ExperimentParams::new(25.0, 0.056, 17.1)?;
    let record = sample_run(&TwinBeamSource::from_params(&truth)?, 50_000, 11)?;
    println!("truth: mu={} eta={} M={}\n", truth.mu(), truth.eta(), truth.mean());

    for modes in [ModeEstimator::Moments, ModeEstimator::MaxLikelihood] {
        let options = EstimateOptions { bootstrap: 100, seed: 3, modes, ..Default::default() };
        let report = estimate_params(&record, &options)?;
        println!("{modes:?}\n{report}");
    }
    Ok(())
}
