//! Performance matrix, forgetting metrics and bound diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, Split, VertexBatch, VertexId};
use crate::matrix::Matrix;
use crate::mmd::{mmd2_hat, subsample_indices, KernelConfig};
use crate::nn::{
    adam_step, cross_entropy_with_grad, gnn_forward, head_forward, softmax_rows, GnnParams,
    HeadParams, Linear, OptState,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::train::ModelState;

/// Lower-triangular accuracy matrix; row `i` holds `r[i][0..=i]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    rows: Vec<Vec<f64>>,
}

impl PerformanceMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task; it must have one more entry than the last.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Structural(format!(
                "row {} has {} entries, expected {}",
                self.rows.len() + 1,
                row.len(),
                self.rows.len() + 1
            )));
        }
        if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Precondition(format!("accuracy {x} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of tasks.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `r_{i,j}` with 1-based indices, `j ≤ i`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i - 1][j - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aps: Vec<f64>,
    /// Forgetting after tasks 2..=m.
    pub afs: Vec<f64>,
    pub fap: f64,
    /// `None` for a single task.
    pub faf: Option<f64>,
}

pub fn compute_metrics(matrix: &PerformanceMatrix) -> Result<MetricsReport> {
    let m = matrix.len();
    if m == 0 {
        return Err(Error::Structural("empty performance matrix".into()));
    }
    let r = matrix.rows();
    let aps: Vec<f64> = r
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    let afs: Vec<f64> = (1..m)
        .map(|i| {
            let s: f64 = (0..=i).map(|j| r[i][j] - r[j][j]).sum();
            s / (i + 1) as f64
        })
        .collect();
    Ok(MetricsReport {
        fap: aps[m - 1],
        faf: afs.last().copied(),
        aps,
        afs,
    })
}

/// Index of the largest entry, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of `vertices` whose argmax prediction under the head of
/// `task_index` equals the label.
pub fn evaluate_accuracy(
    model: &ModelState,
    snapshot: &GraphSnapshot,
    task_index: usize,
    vertices: &[VertexId],
    labels: &[usize],
) -> Result<f64> {
    if vertices.is_empty() {
        return Err(Error::EmptySample);
    }
    if vertices.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vertices.len(),
            got: labels.len(),
        });
    }
    let head = model.heads.head(task_index)?;
    let logits = head_forward(head, &gnn_forward(&model.gnn, snapshot, vertices)?)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(logits.row(i)) == l)
        .count();
    Ok(correct as f64 / vertices.len() as f64)
}

/// Test-split accuracy of `batch` under its own head.
pub fn evaluate_batch(
    model: &ModelState,
    snapshot: &GraphSnapshot,
    batch: &VertexBatch,
) -> Result<f64> {
    let (v, l) = batch.part(Split::Test);
    evaluate_accuracy(model, snapshot, batch.task_index, &v, &l)
}

/// Mean of `|p − onehot|^q` over all entries of the probability matrix.
pub fn lq_risk(probs: &Matrix, labels: &[usize], q: f64) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.rows(),
            got: labels.len(),
        });
    }
    if probs.rows() == 0 {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        for (c, &p) in probs.row(i).iter().enumerate() {
            let y = if c == l { 1.0 } else { 0.0 };
            total += (p - y).abs().powf(q);
        }
    }
    Ok(total / probs.as_slice().len() as f64)
}

/// Latent-space terms of the forgetting bound for one old/new split of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    pub q: f64,
    pub new_task_risk: f64,
    pub mmd_drift: f64,
    pub mmd_crosstask: f64,
    /// Risk of a reference head fitted on pooled data; a proxy, `None` when absent.
    pub lambda_hat: Option<f64>,
    pub observed_cfr: f64,
    /// `new_task_risk + 2·mmd_drift + mmd_crosstask (+ lambda_hat)`.
    pub bound: f64,
    /// `observed_cfr − bound`; nonpositive when the bound holds.
    pub gap: f64,
}

impl BoundDiagnostics {
    pub fn holds(&self) -> bool {
        self.gap <= 0.0
    }
}

/// Inputs to [`bound_components`].
///
/// `old` batches were embedded on `before` and are re-embedded on `after`,
/// which also contains the `new` batch. Each vertex is classified by the head
/// of its own task.
pub struct BoundInputs<'a> {
    pub gnn: &'a GnnParams,
    pub heads: &'a HeadParams,
    pub before: &'a GraphSnapshot,
    pub after: &'a GraphSnapshot,
    pub old: &'a [VertexBatch],
    pub new: &'a VertexBatch,
}

fn ids_and_labels(
    batches: &[VertexBatch],
    which: Option<Split>,
) -> (Vec<VertexId>, Vec<usize>, Vec<usize>) {
    let mut v = Vec::new();
    let mut l = Vec::new();
    let mut t = Vec::new();
    for b in batches {
        let (bv, bl) = match which {
            Some(s) => b.part(s),
            None => (b.vertices.clone(), b.labels.clone()),
        };
        t.extend(std::iter::repeat_n(b.task_index, bv.len()));
        v.extend(bv);
        l.extend(bl);
    }
    (v, l, t)
}

/// Softmax outputs for vertices that may belong to different tasks.
fn task_probs(
    gnn: &GnnParams,
    heads: &HeadParams,
    snapshot: &GraphSnapshot,
    vertices: &[VertexId],
    tasks: &[usize],
) -> Result<Matrix> {
    let emb = gnn_forward(gnn, snapshot, vertices)?;
    let classes = heads
        .heads
        .iter()
        .map(Linear::output_dim)
        .max()
        .unwrap_or(0);
    let mut out = Matrix::zeros(vertices.len(), classes);
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by_key(|&i| tasks[i]);
    for chunk in order.chunk_by(|&a, &b| tasks[a] == tasks[b]) {
        let head = heads.head(tasks[chunk[0]])?;
        let p = softmax_rows(&head_forward(head, &emb.select_rows(chunk))?);
        for (k, &i) in chunk.iter().enumerate() {
            out.row_mut(i)[..p.cols()].copy_from_slice(p.row(k));
        }
    }
    Ok(out)
}

fn mmd_term(
    x: &Matrix,
    y: &Matrix,
    paired: bool,
    kernel: &KernelConfig,
    cap: usize,
    seed: u64,
) -> Result<f64> {
    let ix = subsample_indices(x.rows(), x.rows().min(cap), derive_seed(seed, 0));
    let iy = if paired {
        ix.clone()
    } else {
        subsample_indices(y.rows(), y.rows().min(cap), derive_seed(seed, 1))
    };
    Ok(mmd2_hat(&x.select_rows(&ix), &y.select_rows(&iy), kernel)?
        .max(0.0)
        .sqrt())
}

/// Empirical right-hand side of the forgetting bound against the observed
/// forgetting risk. Risks use the test splits; MMD terms use all vertices,
/// subsampled to at most `subsample` per side.
pub fn bound_components(
    inputs: &BoundInputs<'_>,
    q: f64,
    kernel: &KernelConfig,
    subsample: usize,
    reference: Option<&Linear>,
    seed: u64,
) -> Result<BoundDiagnostics> {
    let BoundInputs {
        gnn,
        heads,
        before,
        after,
        old,
        new,
    } = *inputs;
    let news = std::slice::from_ref(new);

    let (ov, ol, ot) = ids_and_labels(old, Some(Split::Test));
    let (nv, nl, nt) = ids_and_labels(news, Some(Split::Test));
    let observed_cfr = lq_risk(&task_probs(gnn, heads, after, &ov, &ot)?, &ol, q)?;
    let new_task_risk = lq_risk(&task_probs(gnn, heads, after, &nv, &nt)?, &nl, q)?;

    let (oall, _, _) = ids_and_labels(old, None);
    let z_before = gnn_forward(gnn, before, &oall)?;
    let z_after = gnn_forward(gnn, after, &oall)?;
    let z_new = gnn_forward(gnn, after, &new.vertices)?;
    let mmd_drift = mmd_term(
        &z_before,
        &z_after,
        true,
        kernel,
        subsample,
        derive_seed(seed, 0),
    )?;
    let mmd_crosstask = mmd_term(
        &z_before,
        &z_new,
        false,
        kernel,
        subsample,
        derive_seed(seed, 1),
    )?;

    let lambda_hat = match reference {
        Some(h) => {
            let ro = lq_risk(
                &softmax_rows(&head_forward(h, &gnn_forward(gnn, after, &ov)?)?),
                &ol,
                q,
            )?;
            let rn = lq_risk(
                &softmax_rows(&head_forward(h, &gnn_forward(gnn, after, &nv)?)?),
                &nl,
                q,
            )?;
            Some(ro + rn)
        }
        None => None,
    };
    let bound = new_task_risk + 2.0 * mmd_drift + mmd_crosstask + lambda_hat.unwrap_or(0.0);
    Ok(BoundDiagnostics {
        q,
        new_task_risk,
        mmd_drift,
        mmd_crosstask,
        lambda_hat,
        observed_cfr,
        bound,
        gap: observed_cfr - bound,
    })
}

/// Fits a fresh linear head on frozen embeddings of the pooled train splits
/// of `batches` on `snapshot`. Labels are taken as given, so the batches must
/// share one label space.
pub fn fit_reference_head(
    gnn: &GnnParams,
    snapshot: &GraphSnapshot,
    batches: &[VertexBatch],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Linear> {
    let (v, l, _) = ids_and_labels(batches, Some(Split::Train));
    let classes = batches.iter().map(|b| b.num_classes).max().unwrap_or(0);
    let emb = gnn_forward(gnn, snapshot, &v)?;
    let mut head = Linear::glorot(gnn.output_dim(), classes, seed);
    let mut opt = OptState::new(lr);
    for _ in 0..epochs {
        let (_, d) = cross_entropy_with_grad(&head_forward(&head, &emb)?, &l)?;
        let (g, _) = head.backward(&emb, &d)?;
        let mut p = Vec::new();
        let mut gf = Vec::new();
        head.write_flat(&mut p);
        g.write_flat(&mut gf);
        adam_step(&mut p, &gf, &mut opt)?;
        head.read_flat(&p);
    }
    Ok(head)
}

/// MMD² under random relabelings of the pooled sample.
pub fn permutation_null(
    x: &Matrix,
    y: &Matrix,
    kernel: &KernelConfig,
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    let mut pooled: Vec<Vec<f64>> = x
        .iter_rows()
        .chain(y.iter_rows())
        .map(<[f64]>::to_vec)
        .collect();
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        pooled.shuffle(&mut rng);
        let a = Matrix::from_rows(&pooled[..x.rows()])?;
        let b = Matrix::from_rows(&pooled[x.rows()..])?;
        out.push(mmd2_hat(&a, &b, kernel)?);
    }
    Ok(out)
}

/// Empirical `p`-quantile (nearest rank).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = PerformanceMatrix::from_rows(vec![vec![0.9], vec![0.8, 0.85]]).unwrap();
        let r = compute_metrics(&m).unwrap();
        assert!((r.fap - 0.825).abs() < 1e-12);
        assert!((r.faf.unwrap() + 0.05).abs() < 1e-12);
        assert_eq!(r.aps.len(), 2);
        assert_eq!(r.afs.len(), 1);
    }

    #[test]
    fn constant_matrix_has_no_forgetting() {
        let m = PerformanceMatrix::from_rows((1..=4).map(|i| vec![0.7; i]).collect()).unwrap();
        let r = compute_metrics(&m).unwrap();
        assert!((r.fap - 0.7).abs() < 1e-15);
        assert_eq!(r.faf, Some(0.0));
    }

    #[test]
    fn single_task_has_no_faf() {
        let m = PerformanceMatrix::from_rows(vec![vec![0.6]]).unwrap();
        assert_eq!(compute_metrics(&m).unwrap().faf, None);
    }

    #[test]
    fn ragged_matrix_rejected() {
        assert!(PerformanceMatrix::from_rows(vec![vec![0.9], vec![0.8]]).is_err());
        assert!(PerformanceMatrix::from_rows(vec![vec![1.5]]).is_err());
        assert!(compute_metrics(&PerformanceMatrix::new()).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn lq_risk_of_perfect_and_uniform() {
        let p = Matrix::from_rows(&[[1.0, 0.0], [0.5, 0.5]]).unwrap();
        assert_eq!(lq_risk(&p, &[0, 1], 1.0).unwrap(), 0.25);
        assert_eq!(lq_risk(&p, &[0, 1], 2.0).unwrap(), 0.125);
    }

    #[test]
    fn quantile_nearest_rank() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.95), 4.0);
    }
}
