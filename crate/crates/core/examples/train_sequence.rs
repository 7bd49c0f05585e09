//! Trains every trainer kind on one CSBM task sequence and prints the
//! performance matrices.
//!
//! ```bash
//! cargo run --release -p ngil --example train_sequence
//! ```

use ngil::csbm::{generate_csbm, CsbmParams};
use ngil::graph::SplitRatios;
use ngil::rng::derive_seed;
use ngil::train::{prepare_sequence, run_sequence, EvalMode, RunConfig, SsrmConfig, TrainerKind};

fn main() -> ngil::Result<()> {
    let seed = 4;
    let params = CsbmParams::scalar(
        1.0,
        0.02,
        0.01,
        vec![(100, 100), (20, 180), (180, 20), (100, 100)],
    );
    let seq = generate_csbm(&params, derive_seed(seed, 0))?;
    let data = prepare_sequence(
        &seq.batches,
        &seq.all_edges(),
        &seq.features,
        SplitRatios::default(),
        derive_seed(seed, 1),
    )?;

    let runs = [
        (TrainerKind::Bare, EvalMode::Transductive),
        (TrainerKind::Bare, EvalMode::Inductive),
        (TrainerKind::Joint, EvalMode::Inductive),
        (TrainerKind::Replay, EvalMode::Inductive),
        (TrainerKind::BareSsrm, EvalMode::Inductive),
        (TrainerKind::ReplaySsrm, EvalMode::Inductive),
    ];
    for (kind, mode) in runs {
        let cfg = RunConfig {
            kind,
            mode,
            seed,
            bounds: false,
            ssrm: SsrmConfig {
                epochs: 100,
                ..SsrmConfig::default()
            },
            ..RunConfig::default()
        };
        let result = run_sequence(&data, &cfg)?;
        let m = result.metrics.as_ref().expect("complete run");
        let faf = m.faf.map_or("N.A.".into(), |f| format!("{f:+.3}"));
        println!("{kind} ({mode}): FAP {:.3} FAF {faf}", m.fap);
        for row in result.matrix.rows() {
            let cells: Vec<String> = row.iter().map(|r| format!("{r:.2}")).collect();
            println!("    {}", cells.join(" "));
        }
    }
    Ok(())
}
