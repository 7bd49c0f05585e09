//! Writes a CSBM sequence as a graph bundle, loads it back and runs a
//! replay trainer on it, leaving the run directory behind.
//!
//! ```bash
//! cargo run --release -p ngil --example bundle_roundtrip -- /tmp/ngil-demo
//! ```

use std::path::PathBuf;

use ngil::cli::run_experiment;
use ngil::csbm::{generate_csbm, CsbmParams};
use ngil::io::{
    load_graph_bundle, read_run_artifacts, write_graph_bundle, ExperimentConfig, GraphBundle,
};
use ngil::train::TrainerKind;

fn main() -> ngil::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ngil-bundle-roundtrip"));
    let bundle_dir = root.join("bundle");

    let seq = generate_csbm(
        &CsbmParams::scalar(2.0, 0.1, 0.05, vec![(30, 10), (10, 30), (20, 20)]),
        1,
    )?;
    let bundle = GraphBundle::from_csbm(&seq);
    let manifest = write_graph_bundle(&bundle, &bundle_dir)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    assert_eq!(load_graph_bundle(&bundle_dir)?, bundle);

    let cfg = ExperimentConfig {
        bundle: Some(bundle_dir),
        kind: TrainerKind::Replay,
        epochs: 50,
        ..ExperimentConfig::default()
    };
    let run_dir = root.join("run");
    run_experiment(&cfg, &run_dir)?;
    let art = read_run_artifacts(&run_dir)?;
    let m = art.metrics.expect("complete run");
    println!(
        "run in {}: FAP {:.3} FAF {:?}",
        run_dir.display(),
        m.fap,
        m.faf
    );
    Ok(())
}
