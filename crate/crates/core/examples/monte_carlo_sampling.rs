//! Synthetic shot records and their agreement with the model.

use photostat::counting::joint_table;
use photostat::inference::{fidelity, noise_reduction};
use photostat::sampler::{histogram, sample_run, TwinBeamSource};
use photostat::ExperimentParams;

fn main() -> photostat::Result<()> {
    let params = ExperimentParams::new(25.0, 0.056, 17.1)?;
    let source = TwinBeamSource::from_params(&params)?;
    let model = joint_table(&params, 1e-12)?;

    for seed in 0..5 {
        let record = sample_run(&source, 50_000, seed)?;
        let empirical = histogram(&record).joint();
        println!(
            "seed {seed}: fidelity {:.5}  R {:.4}  first shot {:?}",
            fidelity(&model.probs, &empirical.probs),
            noise_reduction(&record)?,
            record.shots[0]
        );
    }

    // same seed, same shots, whatever the thread count
    let a = sample_run(&source, 10_000, 7)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| sample_run(&source, 10_000, 7))?;
    println!("single-threaded run identical: {}", a == b);
    Ok(())
}
