// Majority-vote experiments over a noisy probe and the bound on wrong verdicts.

use std::convert::Infallible;

use iotrim::consensus::{run_functionality_experiment, wrong_verdict_bound, ConsensusConfig, ReadingFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run() -> anyhow::Result<()> {
    let cfg = ConsensusConfig::default();
    println!("P[wrong verdict] <= {:.3e} at p=0.2", wrong_verdict_bound(10, 0.2, 0.8)?);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut test = ReadingFn(|| -> Result<bool, Infallible> { Ok(!rng.gen_bool(0.2)) });
    let v = run_functionality_experiment(&mut test, &cfg).expect("infallible");
    println!(
        "{:?} after {} iterations ({} successes, {} failures)",
        v.verdict, v.iterations, v.successes, v.failures
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
