//! When the community mix of an arriving batch differs from the old one, the
//! expected neighbourhood mean of old vertices moves. With equal mixes it
//! stays put.
//!
//! ```bash
//! cargo run --release -p ngil --example csbm_prop1
//! ```

use ngil::csbm::{generate_csbm, verify_prop1, CsbmParams};

fn main() -> ngil::Result<()> {
    let seq = generate_csbm(
        &CsbmParams::scalar(2.0, 0.1, 0.05, vec![(80, 20), (20, 80)]),
        0,
    )?;
    for (t, b) in seq.batches.iter().enumerate() {
        println!(
            "batch {}: {} vertices, {} new edges ({} inside the batch)",
            t + 1,
            b.len(),
            seq.batch_edges[t].len(),
            seq.intra_batch_edges(t)
        );
    }

    for plan in [vec![(80, 20), (20, 80)], vec![(50, 50), (70, 70)]] {
        let params = CsbmParams::scalar(2.0, 0.1, 0.05, plan.clone());
        let r = verify_prop1(&params, 4000, 7)?;
        let (z1, z2) = r.candidate_z();
        println!("\nplan {plan:?}");
        println!(
            "  expected  before {:+.4}  after {:+.4}",
            r.analytic_candidate_task1[0], r.analytic_candidate_task2[0]
        );
        println!(
            "  simulated before {:+.4}  after {:+.4}  (z {z1:.2}, {z2:.2})",
            r.empirical_mean_task1[0], r.empirical_mean_task2[0]
        );
        println!("  shift: {}", r.verdict);
    }
    Ok(())
}
