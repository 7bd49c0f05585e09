//! Multi-bandwidth MMD² between Gaussian samples, with a permutation null
//! to tell a real shift from sampling noise.
//!
//! ```bash
//! cargo run --release -p ngil --example mmd_kernel
//! ```

use ngil::matrix::Matrix;
use ngil::metrics::{permutation_null, quantile};
use ngil::mmd::{mmd2_grad, mmd2_hat, KernelConfig};
use ngil::rng::rng_from_seed;
use rand_distr::{Distribution, Normal};

fn gaussian(n: usize, dim: usize, shift: f64, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let d = Normal::new(shift, 1.0).unwrap();
    Matrix::from_vec(n, dim, (0..n * dim).map(|_| d.sample(&mut rng)).collect()).unwrap()
}

fn main() -> ngil::Result<()> {
    let kernel = KernelConfig::default();
    println!(
        "bandwidths {:?}, {:?} distance",
        kernel.alphas, kernel.norm_mode
    );
    let x = gaussian(100, 4, 0.0, 1);
    for shift in [0.0, 0.1, 0.25, 0.5, 1.0] {
        let y = gaussian(100, 4, shift, 2);
        let m = mmd2_hat(&x, &y, &kernel)?;
        let null = permutation_null(&x, &y, &kernel, 200, 3)?;
        let p = null.iter().filter(|&&v| v >= m).count() as f64 / null.len() as f64;
        println!(
            "shift {shift:.2}: mmd2 {m:.5}  null 95% {:.5}  p {p:.3}",
            quantile(&null, 0.95)
        );
    }

    // the gradient pulls the two samples towards each other
    let y = gaussian(100, 4, 1.0, 2);
    let (gx, _) = mmd2_grad(&x, &y, &kernel)?;
    let step = 20.0;
    let mut moved = x.clone();
    for (v, g) in moved.as_mut_slice().iter_mut().zip(gx.as_slice()) {
        *v -= step * g;
    }
    println!(
        "one gradient step on x: {:.5} -> {:.5}",
        mmd2_hat(&x, &y, &kernel)?,
        mmd2_hat(&moved, &y, &kernel)?
    );
    Ok(())
}
