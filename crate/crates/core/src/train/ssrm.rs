use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, VertexId};
use crate::matrix::Matrix;
use crate::mmd::{mmd2_value_and_grad, subsample_indices, KernelConfig};
use crate::nn::{GnnParams, Propagation};
use crate::rng::derive_seed;

use super::{MemoryStore, SsrmConfig};

/// Regularizer value, its two components and the encoder gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct SsrmTerms {
    pub reg: f64,
    /// `mmd2(Z_bef, Z_aft)`, unweighted.
    pub drift: f64,
    /// `mmd2(Z_bef, Z_new)`, unweighted.
    pub crosstask: f64,
    pub grad: GnnParams,
}

/// Regularizer on fixed embedding sets, with gradients for each set.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTerms {
    pub reg: f64,
    pub drift: f64,
    pub crosstask: f64,
    pub d_bef: Matrix,
    pub d_aft: Matrix,
    pub d_new: Matrix,
}

/// `alpha·mmd2(zbef, zaft) + beta·mmd2(zbef, znew)` on full embedding sets.
///
/// `zbef` and `zaft` are row-aligned (row k is the same vertex). A term whose
/// sets have fewer than two rows is skipped.
pub fn ssrm_from_embeddings(
    zbef: &Matrix,
    zaft: &Matrix,
    znew: &Matrix,
    alpha: f64,
    beta: f64,
    kernel: &KernelConfig,
) -> Result<EmbeddingTerms> {
    if zbef.rows() != zaft.rows() {
        return Err(Error::DimensionMismatch {
            expected: zbef.rows(),
            got: zaft.rows(),
        });
    }
    let mut out = EmbeddingTerms {
        reg: 0.0,
        drift: 0.0,
        crosstask: 0.0,
        d_bef: Matrix::zeros(zbef.rows(), zbef.cols()),
        d_aft: Matrix::zeros(zaft.rows(), zaft.cols()),
        d_new: Matrix::zeros(znew.rows(), znew.cols()),
    };
    if alpha > 0.0 {
        if zbef.rows() < 2 {
            log::warn!("drift term skipped: {} usable memory vertices", zbef.rows());
        } else if zbef == zaft {
            // identical sets: value and gradient are exactly zero
        } else {
            let (v, gb, ga) = mmd2_value_and_grad(zbef, zaft, kernel)?;
            out.drift = v;
            axpy(&mut out.d_bef, alpha, &gb);
            axpy(&mut out.d_aft, alpha, &ga);
            out.reg += alpha * out.drift;
        }
    }
    if beta > 0.0 {
        if zbef.rows() < 2 || znew.rows() < 2 {
            log::warn!(
                "cross-task term skipped: {} memory and {} new vertices",
                zbef.rows(),
                znew.rows()
            );
        } else {
            let (v, gb, gn) = mmd2_value_and_grad(zbef, znew, kernel)?;
            out.crosstask = v;
            axpy(&mut out.d_bef, beta, &gb);
            axpy(&mut out.d_new, beta, &gn);
            out.reg += beta * out.crosstask;
        }
    }
    Ok(out)
}

fn axpy(acc: &mut Matrix, k: f64, x: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += k * b;
    }
}

fn scatter(rows: usize, idx: &[usize], d: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(rows, d.cols());
    for (k, &i) in idx.iter().enumerate() {
        for (a, b) in out.row_mut(i).iter_mut().zip(d.row(k)) {
            *a += b;
        }
    }
    out
}

/// Rows entering the MMD estimate: up to `cap` memory rows (shared by
/// `Z_bef` and `Z_aft`) and up to `cap` new-batch rows.
pub(crate) struct Picks {
    pub mem: Vec<usize>,
    pub new: Vec<usize>,
}

impl Picks {
    pub(crate) fn new(n_mem: usize, n_new: usize, cap: usize, seed: u64) -> Self {
        Self {
            mem: subsample_indices(n_mem, n_mem.min(cap), derive_seed(seed, 0)),
            new: subsample_indices(n_new, n_new.min(cap), derive_seed(seed, 1)),
        }
    }
}

/// Terms for `zbef_picked` (already restricted to `picks.mem`, in that order)
/// against the picked rows of `zaft` and `znew`. `d_bef` stays in pick order;
/// `d_aft` and `d_new` are scattered back to full size.
pub(crate) fn picked_terms(
    zbef_picked: &Matrix,
    zaft: &Matrix,
    znew: &Matrix,
    picks: &Picks,
    cfg: &SsrmConfig,
) -> Result<EmbeddingTerms> {
    let t = ssrm_from_embeddings(
        zbef_picked,
        &zaft.select_rows(&picks.mem),
        &znew.select_rows(&picks.new),
        cfg.alpha,
        cfg.beta,
        &cfg.kernel,
    )?;
    Ok(EmbeddingTerms {
        d_aft: scatter(zaft.rows(), &picks.mem, &t.d_aft),
        d_new: scatter(znew.rows(), &picks.new, &t.d_new),
        ..t
    })
}

/// SSRM regularizer for the current encoder.
///
/// `Z_bef` embeds the memory on its retained view of the previous snapshot,
/// `Z_aft` embeds the same vertices on `current`, and `Z_new` embeds
/// `new_vertices` on `current`. All three use `gnn` as given, and the gradient
/// flows through all of them.
pub fn ssrm_regularizer(
    gnn: &GnnParams,
    memory: &MemoryStore,
    current: &GraphSnapshot,
    new_vertices: &[VertexId],
    cfg: &SsrmConfig,
    seed: u64,
) -> Result<SsrmTerms> {
    if !cfg.regularizer_active() {
        return Ok(SsrmTerms {
            reg: 0.0,
            drift: 0.0,
            crosstask: 0.0,
            grad: gnn.zeros_like(),
        });
    }
    let retained = memory
        .retained()
        .ok_or_else(|| Error::Precondition("SSRM needs a nonempty memory".into()))?;
    let mem = memory.vertices();
    let depth = gnn.depth();
    let picks = Picks::new(mem.len(), new_vertices.len(), cfg.mmd_subsample, seed);
    let picked: Vec<VertexId> = picks.mem.iter().map(|&i| mem[i]).collect();
    let prev_plan = Propagation::new(retained, &picked, depth)?;
    let targets: Vec<VertexId> = mem.iter().chain(new_vertices).copied().collect();
    let curr_plan = Propagation::new(current, &targets, depth)?;
    let prev = prev_plan.forward(gnn, retained)?;
    let curr = curr_plan.forward(gnn, current)?;
    let zaft = curr.output.select_rows(&(0..mem.len()).collect::<Vec<_>>());
    let znew = curr
        .output
        .select_rows(&(mem.len()..targets.len()).collect::<Vec<_>>());
    let t = picked_terms(&prev.output, &zaft, &znew, &picks, cfg)?;
    let mut d_curr = Matrix::zeros(targets.len(), gnn.output_dim());
    for k in 0..mem.len() {
        d_curr.row_mut(k).copy_from_slice(t.d_aft.row(k));
    }
    for k in 0..new_vertices.len() {
        d_curr
            .row_mut(mem.len() + k)
            .copy_from_slice(t.d_new.row(k));
    }
    let mut grad = prev.backward(&prev_plan, gnn, &t.d_bef)?;
    grad.add_assign(&curr.backward(&curr_plan, gnn, &d_curr)?);
    Ok(SsrmTerms {
        reg: t.reg,
        drift: t.drift,
        crosstask: t.crosstask,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csbm::{generate_csbm, CsbmParams};
    use crate::graph::{split_vertices, SplitRatios};
    use crate::nn::{grad_check, Activation};
    use crate::train::{select_memory, MemoryStrategy};

    struct Toy {
        gnn: GnnParams,
        memory: MemoryStore,
        current: GraphSnapshot,
        new: Vec<VertexId>,
    }

    fn toy() -> Toy {
        let p = CsbmParams::scalar(2.0, 0.4, 0.2, vec![(4, 2), (2, 4)]);
        let seq = generate_csbm(&p, 11).unwrap();
        let snaps = seq.snapshots().unwrap();
        let b1 = split_vertices(&seq.batches[0], SplitRatios::default(), 0).unwrap();
        let memory = select_memory(&[b1], 4, MemoryStrategy::Uniform, 2, &snaps[0], 1).unwrap();
        let gnn = GnnParams::init(&[1, 4], Activation::Tanh, 5).unwrap();
        Toy {
            gnn,
            memory,
            current: snaps[1].clone(),
            new: seq.batches[1].vertices.clone(),
        }
    }

    #[test]
    fn disabled_regularizer_is_zero() {
        let t = toy();
        let cfg = SsrmConfig {
            alpha: 0.0,
            beta: 0.0,
            ..SsrmConfig::default()
        };
        let r = ssrm_regularizer(&t.gnn, &t.memory, &t.current, &t.new, &cfg, 0).unwrap();
        assert_eq!(r.reg, 0.0);
        assert_eq!(r.grad, t.gnn.zeros_like());
    }

    #[test]
    fn unchanged_snapshot_has_zero_drift() {
        let t = toy();
        let prev = t.memory.retained().unwrap().clone();
        let r = ssrm_regularizer(&t.gnn, &t.memory, &prev, &[], &SsrmConfig::default(), 0).unwrap();
        assert_eq!(r.drift, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = toy();
        let cfg = SsrmConfig {
            alpha: 0.7,
            beta: 0.3,
            ..SsrmConfig::default()
        };
        let r = ssrm_regularizer(&t.gnn, &t.memory, &t.current, &t.new, &cfg, 4).unwrap();
        let mut flat = Vec::new();
        t.gnn.write_flat(&mut flat);
        let mut analytic = Vec::new();
        r.grad.write_flat(&mut analytic);
        let mut work = t.gnn.clone();
        let report = grad_check(
            |q| {
                work.read_flat(q);
                ssrm_regularizer(&work, &t.memory, &t.current, &t.new, &cfg, 4)
                    .unwrap()
                    .reg
            },
            &flat,
            &analytic,
            1e-5,
            1e-4,
            200,
            0,
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn single_row_terms_are_skipped() {
        let z = Matrix::from_rows(&[[1.0]]).unwrap();
        let w = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let t = ssrm_from_embeddings(&z, &z, &w, 1.0, 1.0, &KernelConfig::default()).unwrap();
        assert_eq!(t.reg, 0.0);
    }
}
