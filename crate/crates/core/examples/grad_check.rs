//! Finite-difference check of the classification loss and of the full
//! regularized objective on toy CSBM instances.
//!
//! ```bash
//! cargo run --release -p ngil --example grad_check
//! ```

use ngil::cli::toy_grad_checks;

fn main() -> ngil::Result<()> {
    for (vertices, hidden, layers) in [(8, 4, 1), (10, 5, 2), (12, 3, 3)] {
        let (ce, ssrm) = toy_grad_checks(vertices, hidden, layers, 1e-5, 1e-4, 0)?;
        println!(
            "vertices={vertices} hidden={hidden} layers={layers}: \
             ce {} coords err {:.2e} | ce+reg {} coords err {:.2e}",
            ce.checked, ce.max_rel_error, ssrm.checked, ssrm.max_rel_error
        );
        assert!(ce.passed && ssrm.passed);
    }
    Ok(())
}
