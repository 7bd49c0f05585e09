//! Forgetting-bound components on a two-task CSBM sequence whose second
//! batch flips the community mix.
//!
//! ```bash
//! cargo run --release -p ngil --example bound_diagnostics
//! ```

use ngil::csbm::{generate_csbm, CsbmParams};
use ngil::graph::SplitRatios;
use ngil::rng::derive_seed;
use ngil::train::{prepare_sequence, run_sequence, RunConfig, SsrmConfig, TrainerKind};

fn main() -> ngil::Result<()> {
    let params = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(80, 20), (20, 80)]);
    println!("kind          risk   drift  cross  lambda observed bound   holds");
    for seed in 0..3 {
        let seq = generate_csbm(&params, derive_seed(seed, 0))?;
        let data = prepare_sequence(
            &seq.batches,
            &seq.all_edges(),
            &seq.features,
            SplitRatios::default(),
            derive_seed(seed, 1),
        )?;
        for kind in [TrainerKind::Bare, TrainerKind::ReplaySsrm] {
            let cfg = RunConfig {
                kind,
                seed,
                ssrm: SsrmConfig {
                    epochs: 100,
                    ..SsrmConfig::default()
                },
                ..RunConfig::default()
            };
            let b = run_sequence(&data, &cfg)?.bounds.expect("bounds requested");
            println!(
                "{:<13} {:.3}  {:.3}  {:.3}  {:.3}  {:.3}    {:.3}  {}",
                kind.as_str(),
                b.new_task_risk,
                b.mmd_drift,
                b.mmd_crosstask,
                b.lambda_hat.unwrap_or(f64::NAN),
                b.observed_cfr,
                b.bound,
                b.holds()
            );
        }
    }
    Ok(())
}
