use serde::{Deserialize, Serialize};

use super::{Activation, Linear};
use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, VertexId};
use crate::matrix::Matrix;
use crate::rng::derive_seed;

/// Stacked mean-aggregation layers:
/// `h⁽ˡ⁺¹⁾ᵥ = act(mean{h⁽ˡ⁾ᵤ : u ∈ N(v) ∪ {v}} · W⁽ˡ⁾ + b⁽ˡ⁾)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl GnnParams {
    /// `dims = [input, hidden₁, …, output]`; one layer per consecutive pair.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| Linear::glorot(w[0], w[1], derive_seed(seed, l as u64)))
            .collect();
        Ok(Self { layers, activation })
    }

    /// Hop count the encoder consumes.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("encoder has no layers".into()));
        }
        for w in self.layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].output_dim(),
                    got: w[1].input_dim(),
                });
            }
        }
        Ok(())
    }

    /// Zeroed parameters of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> GnnParams {
        GnnParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.layers.iter().for_each(|l| l.write_flat(out));
    }

    pub fn read_flat(&mut self, flat: &[f64]) -> usize {
        let mut used = 0;
        for l in &mut self.layers {
            used += l.read_flat(&flat[used..]);
        }
        used
    }

    pub fn add_assign(&mut self, other: &GnnParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }
}

/// Sparse aggregation table for one layer in CSR form: output row `i`
/// averages input rows `index[offset[i]..offset[i+1]]`.
#[derive(Clone, Debug)]
struct Aggregation {
    offset: Vec<usize>,
    index: Vec<usize>,
}

/// Precomputed receptive field of a set of targets on one snapshot.
///
/// `levels[l]` holds the snapshot-local vertices whose layer-`l` state is
/// needed; `levels[L]` is the deduplicated target set. Building the plan once
/// lets repeated forward/backward passes over a fixed graph skip the BFS.
#[derive(Clone, Debug)]
pub struct Propagation {
    levels: Vec<Vec<usize>>,
    aggregations: Vec<Aggregation>,
    /// Row of `levels[L]` for every requested target, in request order.
    target_rows: Vec<usize>,
    feature_dim: usize,
}

impl Propagation {
    pub fn new(snapshot: &GraphSnapshot, targets: &[VertexId], depth: usize) -> Result<Self> {
        let n = snapshot.num_vertices();
        let mut target_local = Vec::with_capacity(targets.len());
        for &t in targets {
            target_local.push(
                snapshot
                    .position(t)
                    .ok_or_else(|| Error::NotFound(format!("target vertex {t}")))?,
            );
        }
        let mut top = target_local.clone();
        top.sort_unstable();
        top.dedup();

        // levels built from the top down: level l = level l+1 ∪ N(level l+1)
        let mut levels = vec![top];
        let mut mark = vec![false; n];
        for _ in 0..depth {
            let above = levels.last().expect("nonempty");
            mark.iter_mut().for_each(|m| *m = false);
            for &v in above {
                mark[v] = true;
                for &u in snapshot.neighbors_local(v) {
                    mark[u] = true;
                }
            }
            levels.push((0..n).filter(|&i| mark[i]).collect());
        }
        levels.reverse();

        let mut slot = vec![usize::MAX; n];
        let mut aggregations = Vec::with_capacity(depth);
        for l in 0..depth {
            for (row, &v) in levels[l].iter().enumerate() {
                slot[v] = row;
            }
            let mut offset = Vec::with_capacity(levels[l + 1].len() + 1);
            let mut index = Vec::new();
            offset.push(0);
            for &v in &levels[l + 1] {
                // N(v) ∪ {v} in ascending id order
                let ns = snapshot.neighbors_local(v);
                let at = ns.partition_point(|&u| u < v);
                index.extend(ns[..at].iter().map(|&u| slot[u]));
                index.push(slot[v]);
                index.extend(ns[at..].iter().map(|&u| slot[u]));
                offset.push(index.len());
            }
            aggregations.push(Aggregation { offset, index });
        }
        let top = &levels[depth];
        let target_rows = target_local
            .iter()
            .map(|t| top.binary_search(t).expect("target in top level"))
            .collect();
        Ok(Self {
            levels,
            aggregations,
            target_rows,
            feature_dim: snapshot.feature_dim(),
        })
    }

    pub fn depth(&self) -> usize {
        self.aggregations.len()
    }

    pub fn num_targets(&self) -> usize {
        self.target_rows.len()
    }

    /// Number of vertices whose input features are read.
    pub fn receptive_field(&self) -> usize {
        self.levels[0].len()
    }

    /// Forward pass keeping the intermediates needed by [`GnnCache::backward`].
    pub fn forward(&self, params: &GnnParams, snapshot: &GraphSnapshot) -> Result<GnnCache> {
        if params.depth() != self.depth() {
            return Err(Error::DimensionMismatch {
                expected: self.depth(),
                got: params.depth(),
            });
        }
        if params.input_dim() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: params.input_dim(),
                got: self.feature_dim,
            });
        }
        let mut h = snapshot.features().select_rows(&self.levels[0]);
        let mut means = Vec::with_capacity(self.depth());
        let mut pres = Vec::with_capacity(self.depth());
        for (layer, agg) in params.layers.iter().zip(&self.aggregations) {
            let rows = agg.offset.len() - 1;
            let mut mean = Matrix::zeros(rows, h.cols());
            for i in 0..rows {
                let members = &agg.index[agg.offset[i]..agg.offset[i + 1]];
                let out = mean.row_mut(i);
                for &u in members {
                    for (o, x) in out.iter_mut().zip(h.row(u)) {
                        *o += x;
                    }
                }
                let k = 1.0 / members.len() as f64;
                out.iter_mut().for_each(|o| *o *= k);
            }
            let pre = layer.forward(&mean)?;
            let mut next = pre.clone();
            next.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = params.activation.apply(*x));
            means.push(mean);
            pres.push(pre);
            h = next;
        }
        let output = h.select_rows(&self.target_rows);
        Ok(GnnCache {
            means,
            pres,
            top: h,
            output,
        })
    }
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct GnnCache {
    means: Vec<Matrix>,
    pres: Vec<Matrix>,
    top: Matrix,
    /// Embeddings for the requested targets, in request order.
    pub output: Matrix,
}

impl GnnCache {
    /// Parameter gradient for upstream gradient `d_output` (one row per target).
    pub fn backward(
        &self,
        plan: &Propagation,
        params: &GnnParams,
        d_output: &Matrix,
    ) -> Result<GnnParams> {
        if d_output.rows() != plan.target_rows.len() || d_output.cols() != self.top.cols() {
            return Err(Error::DimensionMismatch {
                expected: plan.target_rows.len(),
                got: d_output.rows(),
            });
        }
        let mut dh = Matrix::zeros(self.top.rows(), self.top.cols());
        for (k, &row) in plan.target_rows.iter().enumerate() {
            for (a, b) in dh.row_mut(row).iter_mut().zip(d_output.row(k)) {
                *a += b;
            }
        }
        let mut grads = params.zeros_like();
        for l in (0..plan.depth()).rev() {
            let mut dpre = dh;
            for (d, &p) in dpre.as_mut_slice().iter_mut().zip(self.pres[l].as_slice()) {
                *d *= params.activation.derivative(p);
            }
            let (g, dmean) = params.layers[l].backward(&self.means[l], &dpre)?;
            grads.layers[l] = g;
            if l == 0 {
                break;
            }
            let agg = &plan.aggregations[l];
            let mut below = Matrix::zeros(plan.levels[l].len(), dmean.cols());
            for i in 0..dmean.rows() {
                let members = &agg.index[agg.offset[i]..agg.offset[i + 1]];
                let k = 1.0 / members.len() as f64;
                for &u in members {
                    for (a, b) in below.row_mut(u).iter_mut().zip(dmean.row(i)) {
                        *a += k * b;
                    }
                }
            }
            dh = below;
        }
        Ok(grads)
    }
}

/// Embeddings of `targets` on `snapshot`.
pub fn gnn_forward(
    params: &GnnParams,
    snapshot: &GraphSnapshot,
    targets: &[VertexId],
) -> Result<Matrix> {
    let plan = Propagation::new(snapshot, targets, params.depth())?;
    Ok(plan.forward(params, snapshot)?.output)
}
