//! Multi-bandwidth exponential kernel and the biased (V-statistic) MMD²
//! estimator, with exact gradients with respect to both sample sets.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, SampleMatrix};
use crate::rng::rng_from_seed;

/// Distance used in the kernel exponent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// `r = ‖x − y‖₂`
    #[default]
    PlainL2,
    /// `r = ‖x − y‖₂²`
    SquaredL2,
}

/// `k(x, y) = Σᵢ exp(−αᵢ · r(x, y))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub norm_mode: NormMode,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 0.1, 0.01],
            norm_mode: NormMode::PlainL2,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Config("kernel needs at least one bandwidth".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Config(format!(
                "kernel bandwidth {a} must be positive"
            )));
        }
        Ok(())
    }

    #[inline]
    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match self.norm_mode {
            NormMode::PlainL2 => sq.sqrt(),
            NormMode::SquaredL2 => sq,
        }
    }

    #[inline]
    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = self.distance(x, y);
        self.alphas.iter().map(|a| (-a * r).exp()).sum()
    }

    /// Adds `scale · ∂k(x, y)/∂x` into `out`. Zero at `x = y` in plain-L2 mode.
    #[inline]
    fn accumulate_grad_x(&self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        let r = self.distance(x, y);
        // ∂k/∂x = Σ −α e^{−αr} · ∂r/∂x
        let dk_dr: f64 = self.alphas.iter().map(|a| -a * (-a * r).exp()).sum();
        let coef = match self.norm_mode {
            NormMode::PlainL2 => {
                if r == 0.0 {
                    return;
                }
                dk_dr / r
            }
            NormMode::SquaredL2 => 2.0 * dk_dr,
        };
        let c = scale * coef;
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o += c * (a - b);
        }
    }
}

pub fn kernel_eval(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(cfg.eval_unchecked(x, y))
}

fn check_pair(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::EmptySample);
    }
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    Ok(())
}

/// Sum of `k(aᵢ, bⱼ)` with `i` outer and `j` inner.
fn gram_sum(a: &SampleMatrix, b: &SampleMatrix, k: &mut impl FnMut(&[f64], &[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for x in a.iter_rows() {
        let mut row = 0.0;
        for y in b.iter_rows() {
            row += k(x, y);
        }
        total += row;
    }
    total
}

/// MMD² estimate with an arbitrary kernel closure. The closure is called
/// exactly `n₁² + n₂² + n₁n₂` times.
///
/// All three double sums share one loop order, so `x == y` yields exactly zero.
pub fn mmd2_hat_with(
    x: &SampleMatrix,
    y: &SampleMatrix,
    mut k: impl FnMut(&[f64], &[f64]) -> f64,
) -> Result<f64> {
    check_pair(x, y)?;
    let n1 = x.rows() as f64;
    let n2 = y.rows() as f64;
    let kxx = gram_sum(x, x, &mut k);
    let kyy = gram_sum(y, y, &mut k);
    let kxy = gram_sum(x, y, &mut k);
    Ok(kxx / (n1 * n1) + kyy / (n2 * n2) - 2.0 * kxy / (n1 * n2))
}

pub fn mmd2_hat(x: &SampleMatrix, y: &SampleMatrix, cfg: &KernelConfig) -> Result<f64> {
    mmd2_hat_with(x, y, |a, b| cfg.eval_unchecked(a, b))
}

/// MMD (square root of the clamped MMD² estimate).
pub fn mmd_hat(x: &SampleMatrix, y: &SampleMatrix, cfg: &KernelConfig) -> Result<f64> {
    Ok(mmd2_hat(x, y, cfg)?.max(0.0).sqrt())
}

/// Gradient of [`mmd2_hat`] with respect to every row of `x` and of `y`.
pub fn mmd2_grad(
    x: &SampleMatrix,
    y: &SampleMatrix,
    cfg: &KernelConfig,
) -> Result<(Matrix, Matrix)> {
    check_pair(x, y)?;
    let n1 = x.rows() as f64;
    let n2 = y.rows() as f64;
    let mut gx = Matrix::zeros(x.rows(), x.cols());
    let mut gy = Matrix::zeros(y.rows(), y.cols());
    // The kernel is symmetric, so each within-set pair contributes twice.
    let self_x = 2.0 / (n1 * n1);
    let self_y = 2.0 / (n2 * n2);
    let cross = -2.0 / (n1 * n2);
    for a in 0..x.rows() {
        let xa = x.row(a);
        let out = gx.row_mut(a);
        for xb in x.iter_rows() {
            cfg.accumulate_grad_x(xa, xb, self_x, out);
        }
        for yb in y.iter_rows() {
            cfg.accumulate_grad_x(xa, yb, cross, out);
        }
    }
    for a in 0..y.rows() {
        let ya = y.row(a);
        let out = gy.row_mut(a);
        for yb in y.iter_rows() {
            cfg.accumulate_grad_x(ya, yb, self_y, out);
        }
        for xb in x.iter_rows() {
            cfg.accumulate_grad_x(ya, xb, cross, out);
        }
    }
    Ok((gx, gy))
}

/// [`mmd2_hat`] and [`mmd2_grad`] together. Agrees with them up to rounding;
/// used on the training path.
///
/// Each block stores the pairwise `∂k/∂a = c·(a − b)` coefficients, and the
/// gradients are then `rowsum(C)·A − C·B`.
pub fn mmd2_value_and_grad(
    x: &SampleMatrix,
    y: &SampleMatrix,
    cfg: &KernelConfig,
) -> Result<(f64, Matrix, Matrix)> {
    check_pair(x, y)?;
    let n1 = x.rows() as f64;
    let n2 = y.rows() as f64;
    let (kxx, cxx) = coef_block(x, x, cfg, true);
    let (kyy, cyy) = coef_block(y, y, cfg, true);
    let (kxy, cxy) = coef_block(x, y, cfg, false);
    let value = kxx / (n1 * n1) + kyy / (n2 * n2) - 2.0 * kxy / (n1 * n2);

    let mut gx = pull(&cxx, x, x, 2.0 / (n1 * n1))?;
    gx.add_assign(&pull(&cxy, x, y, -2.0 / (n1 * n2))?);
    let mut gy = pull(&cyy, y, y, 2.0 / (n2 * n2))?;
    gy.add_assign(&pull(&transpose(&cxy), y, x, -2.0 / (n1 * n2))?);
    Ok((value, gx, gy))
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (p, q) in ca.zip(cb) {
        for l in 0..4 {
            let d = p[l] - q[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (p, q) in ra.iter().zip(rb) {
        tail += (p - q) * (p - q);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `Σ k(aᵢ, bⱼ)` and the matrix of gradient coefficients.
fn coef_block(a: &Matrix, b: &Matrix, cfg: &KernelConfig, symmetric: bool) -> (f64, Matrix) {
    let mut c = Matrix::zeros(a.rows(), b.rows());
    let mut total = 0.0;
    for i in 0..a.rows() {
        let lo = if symmetric { i + 1 } else { 0 };
        let mut row = 0.0;
        for j in lo..b.rows() {
            let sq = sq_dist(a.row(i), b.row(j));
            let r = match cfg.norm_mode {
                NormMode::PlainL2 => sq.sqrt(),
                NormMode::SquaredL2 => sq,
            };
            let mut k = 0.0;
            let mut dk_dr = 0.0;
            for &al in &cfg.alphas {
                let e = (-al * r).exp();
                k += e;
                dk_dr -= al * e;
            }
            row += k;
            c[(i, j)] = match cfg.norm_mode {
                NormMode::PlainL2 if r == 0.0 => 0.0,
                NormMode::PlainL2 => dk_dr / r,
                NormMode::SquaredL2 => 2.0 * dk_dr,
            };
        }
        total += row;
    }
    if symmetric {
        for i in 0..a.rows() {
            for j in 0..i {
                c[(i, j)] = c[(j, i)];
            }
        }
        total = 2.0 * total + cfg.alphas.len() as f64 * a.rows() as f64;
    }
    (total, c)
}

/// `w · (rowsum(C)·A − C·B)`
fn pull(c: &Matrix, a: &Matrix, b: &Matrix, w: f64) -> Result<Matrix> {
    let mut g = c.matmul(b)?;
    for (i, s) in c.iter_rows().map(|r| r.iter().sum::<f64>()).enumerate() {
        for (o, v) in g.row_mut(i).iter_mut().zip(a.row(i)) {
            *o = w * (s * v - *o);
        }
    }
    Ok(g)
}

fn transpose(m: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(m.cols(), m.rows());
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            t[(j, i)] = *v;
        }
    }
    t
}

/// Row indices for a subsample of size `n` out of `rows`: without replacement
/// when `n ≤ rows`, with replacement otherwise.
pub fn subsample_indices(rows: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    if rows == 0 {
        return Vec::new();
    }
    if n <= rows {
        index::sample(&mut rng, rows, n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..rows)).collect()
    }
}

pub fn subsample(x: &SampleMatrix, n: usize, seed: u64) -> Result<SampleMatrix> {
    if n == 0 {
        return Err(Error::Precondition(
            "subsample size must be at least 1".into(),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::EmptySample);
    }
    Ok(x.select_rows(&subsample_indices(x.rows(), n, seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn kernel_values() {
        let cfg = KernelConfig::default();
        assert_eq!(kernel_eval(&[0.3, 1.0], &[0.3, 1.0], &cfg).unwrap(), 3.0);
        // e^-1 + e^-0.1 + e^-0.01, evaluated independently
        let v = kernel_eval(&[0.0], &[1.0], &cfg).unwrap();
        assert!((v - 2.262_766_692_956_570).abs() < 1e-12, "{v}");
        assert!(kernel_eval(&[0.0], &[1.0, 2.0], &cfg).is_err());
    }

    #[test]
    fn singleton_mmd() {
        let cfg = KernelConfig::default();
        let m = mmd2_hat(&col(&[0.0]), &col(&[1.0]), &cfg).unwrap();
        assert!((m - 1.474_466_614_086_860).abs() < 1e-9, "{m}");
    }

    #[test]
    fn identical_sets_give_exact_zero() {
        let x = Matrix::from_rows(&[[0.1, -2.0], [3.5, 0.25], [1.0, 1.0]]).unwrap();
        for mode in [NormMode::PlainL2, NormMode::SquaredL2] {
            let cfg = KernelConfig {
                norm_mode: mode,
                ..Default::default()
            };
            assert_eq!(mmd2_hat(&x, &x, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        let cfg = KernelConfig::default();
        let empty = Matrix::zeros(0, 1);
        assert!(matches!(
            mmd2_hat(&empty, &col(&[1.0]), &cfg),
            Err(Error::EmptySample)
        ));
        let wide = Matrix::zeros(1, 2);
        assert!(mmd2_hat(&wide, &col(&[1.0]), &cfg).is_err());
        assert!(KernelConfig {
            alphas: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn squared_singleton_gradient_points_towards_other_sample() {
        let cfg = KernelConfig {
            norm_mode: NormMode::SquaredL2,
            ..Default::default()
        };
        let (gx, gy) = mmd2_grad(&col(&[0.0]), &col(&[1.0]), &cfg).unwrap();
        // d/dx [k(x,x) + k(y,y) − 2k(x,y)] = −2 Σ 2α e^{−α} (y − x) at x=0, y=1
        let expected: f64 = -2.0
            * [1.0f64, 0.1, 0.01]
                .iter()
                .map(|a| 2.0 * a * (-a).exp())
                .sum::<f64>();
        assert!((gx[(0, 0)] - expected).abs() < 1e-14);
        assert!(gx[(0, 0)] < 0.0, "descent moves x up towards y");
        assert!((gy[(0, 0)] + expected).abs() < 1e-14);
    }

    #[test]
    fn plain_gradient_vanishes_at_coincident_points() {
        let cfg = KernelConfig::default();
        let x = col(&[0.5, 0.5]);
        let (gx, gy) = mmd2_grad(&x, &x, &cfg).unwrap();
        assert!(gx.as_slice().iter().all(|&g| g == 0.0));
        assert!(gy.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fused_pass_agrees_with_separate_ones() {
        let x = Matrix::from_rows(&[[0.1, 2.0], [1.5, -0.3], [0.0, 0.7]]).unwrap();
        let y = Matrix::from_rows(&[[1.0, 1.0], [-2.0, 0.5]]).unwrap();
        for mode in [NormMode::PlainL2, NormMode::SquaredL2] {
            let cfg = KernelConfig {
                norm_mode: mode,
                ..KernelConfig::default()
            };
            let (v, gx, gy) = mmd2_value_and_grad(&x, &y, &cfg).unwrap();
            let (ex, ey) = mmd2_grad(&x, &y, &cfg).unwrap();
            assert!((v - mmd2_hat(&x, &y, &cfg).unwrap()).abs() < 1e-13);
            assert!(gx.max_abs_diff(&ex) < 1e-13 && gy.max_abs_diff(&ey) < 1e-13);
        }
    }

    #[test]
    fn subsample_basics() {
        let x = col(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let mut perm = subsample(&x, 5, 11).unwrap().into_vec();
        perm.sort_by(f64::total_cmp);
        assert_eq!(perm, x.as_slice());
        assert_eq!(subsample(&x, 1, 3).unwrap(), subsample(&x, 1, 3).unwrap());
        assert_eq!(subsample(&x, 12, 3).unwrap().rows(), 12);
        assert!(subsample(&x, 0, 3).is_err());
    }
}
