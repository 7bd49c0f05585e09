//! Evolving-graph data model.
//!
//! A sequence of tasks delivers disjoint [`VertexBatch`]es. Each batch is merged
//! into the running [`GraphSnapshot`] together with the edges that attach it,
//! so the snapshot at task `i` is the graph induced by all vertices seen so far.
//! Vertices are addressed by global [`VertexId`]; inside a snapshot they also
//! have a local index (their rank in the sorted vertex list), which is what the
//! adjacency lists store.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed};

pub type VertexId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Vertices that arrive with one task, with task-local class ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexBatch {
    /// 1-based task ordinal.
    pub task_index: usize,
    pub vertices: Vec<VertexId>,
    /// Class id per vertex, in `0..num_classes`.
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
    pub num_classes: usize,
}

impl VertexBatch {
    /// A batch with every vertex tagged as train.
    pub fn new(
        task_index: usize,
        vertices: Vec<VertexId>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if vertices.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: vertices.len(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Precondition(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        let split = vec![Split::Train; vertices.len()];
        Ok(Self {
            task_index,
            vertices,
            labels,
            split,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Vertices and labels carrying the given split tag, in batch order.
    pub fn part(&self, which: Split) -> (Vec<VertexId>, Vec<usize>) {
        let mut v = Vec::new();
        let mut l = Vec::new();
        for i in 0..self.len() {
            if self.split[i] == which {
                v.push(self.vertices[i]);
                l.push(self.labels[i]);
            }
        }
        (v, l)
    }

    pub fn count(&self, which: Split) -> usize {
        self.split.iter().filter(|&&s| s == which).count()
    }
}

/// Undirected simple graph over a sorted vertex set, with one feature row per vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    vertices: Vec<VertexId>,
    adjacency: Vec<Vec<usize>>,
    features: Matrix,
    task_horizon: usize,
}

impl GraphSnapshot {
    pub fn empty(feature_dim: usize) -> Self {
        Self {
            vertices: Vec::new(),
            adjacency: Vec::new(),
            features: Matrix::zeros(0, feature_dim),
            task_horizon: 0,
        }
    }

    /// Builds a snapshot from global ids, an edge list and aligned feature rows.
    ///
    /// `vertices` need not be sorted; feature row `k` belongs to `vertices[k]`.
    pub fn from_edges(
        vertices: &[VertexId],
        edges: &[(VertexId, VertexId)],
        features: &Matrix,
        task_horizon: usize,
    ) -> Result<Self> {
        if features.rows() != vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: vertices.len(),
                got: features.rows(),
            });
        }
        let mut order: Vec<usize> = (0..vertices.len()).collect();
        order.sort_by_key(|&k| vertices[k]);
        let sorted: Vec<VertexId> = order.iter().map(|&k| vertices[k]).collect();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Structural("duplicate vertex id".into()));
        }
        let mut snap = Self {
            features: features.select_rows(&order),
            adjacency: vec![Vec::new(); sorted.len()],
            vertices: sorted,
            task_horizon,
        };
        let mut seen = HashSet::with_capacity(edges.len());
        for &(u, v) in edges {
            let (a, b) = snap.checked_edge(u, v)?;
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Structural(format!("duplicate edge ({u}, {v})")));
            }
            snap.adjacency[a].push(b);
            snap.adjacency[b].push(a);
        }
        snap.adjacency.iter_mut().for_each(|n| n.sort_unstable());
        Ok(snap)
    }

    fn checked_edge(&self, u: VertexId, v: VertexId) -> Result<(usize, usize)> {
        if u == v {
            return Err(Error::Structural(format!("self loop on vertex {u}")));
        }
        let a = self
            .position(u)
            .ok_or_else(|| Error::Structural(format!("edge references unknown vertex {u}")))?;
        let b = self
            .position(v)
            .ok_or_else(|| Error::Structural(format!("edge references unknown vertex {v}")))?;
        Ok((a, b))
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn task_horizon(&self) -> usize {
        self.task_horizon
    }

    /// Local index of a global id.
    #[inline]
    pub fn position(&self, id: VertexId) -> Option<usize> {
        self.vertices.binary_search(&id).ok()
    }

    pub fn contains(&self, id: VertexId) -> bool {
        self.position(id).is_some()
    }

    /// Neighbors of local index `i`, as sorted local indices.
    #[inline]
    pub fn neighbors_local(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn neighbor_ids(&self, id: VertexId) -> Option<Vec<VertexId>> {
        let i = self.position(id)?;
        Some(
            self.adjacency[i]
                .iter()
                .map(|&j| self.vertices[j])
                .collect(),
        )
    }

    pub fn degree(&self, id: VertexId) -> Option<usize> {
        self.position(id).map(|i| self.adjacency[i].len())
    }

    pub fn feature_row(&self, id: VertexId) -> Option<&[f64]> {
        self.position(id).map(|i| self.features.row(i))
    }

    /// Edge list `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(VertexId, VertexId)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (i, ns) in self.adjacency.iter().enumerate() {
            for &j in ns {
                if i < j {
                    out.push((self.vertices[i], self.vertices[j]));
                }
            }
        }
        out
    }

    pub fn edge_set(&self) -> HashSet<(VertexId, VertexId)> {
        self.edges().into_iter().collect()
    }

    /// Local indices of all vertices within `k` hops of any of `roots` (local), sorted.
    pub fn ball_local(&self, roots: &[usize], k: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_vertices()];
        let mut queue = VecDeque::new();
        for &r in roots {
            if dist[r] == usize::MAX {
                dist[r] = 0;
                queue.push_back(r);
            }
        }
        while let Some(u) = queue.pop_front() {
            if dist[u] == k {
                continue;
            }
            for &w in &self.adjacency[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        (0..self.num_vertices())
            .filter(|&i| dist[i] != usize::MAX)
            .collect()
    }

    /// Checks symmetry, sortedness and the absence of self loops and duplicates.
    pub fn check_invariants(&self) -> Result<()> {
        if self.vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Structural("vertex list not strictly sorted".into()));
        }
        if self.features.rows() != self.vertices.len() {
            return Err(Error::Structural(
                "feature rows do not match vertices".into(),
            ));
        }
        for (i, ns) in self.adjacency.iter().enumerate() {
            if ns.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Structural(format!(
                    "neighbors of {} unsorted or duplicated",
                    self.vertices[i]
                )));
            }
            for &j in ns {
                if j == i {
                    return Err(Error::Structural(format!(
                        "self loop on {}",
                        self.vertices[i]
                    )));
                }
                if self.adjacency[j].binary_search(&i).is_err() {
                    return Err(Error::Structural(format!(
                        "asymmetric edge ({}, {})",
                        self.vertices[i], self.vertices[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Merges a new batch and its attaching edges into `base`.
///
/// Every new edge must touch at least one batch vertex; edges between two
/// vertices already in `base` are rejected. `batch_features` holds one row per
/// batch vertex, in batch order.
pub fn accumulate_snapshot(
    base: &GraphSnapshot,
    batch: &VertexBatch,
    new_edges: &[(VertexId, VertexId)],
    batch_features: &Matrix,
) -> Result<GraphSnapshot> {
    if batch_features.rows() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: batch_features.rows(),
        });
    }
    let dim = if base.num_vertices() == 0 {
        batch_features.cols()
    } else {
        base.feature_dim()
    };
    if batch_features.cols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: batch_features.cols(),
        });
    }
    let mut incoming: Vec<(VertexId, usize)> = batch
        .vertices
        .iter()
        .copied()
        .enumerate()
        .map(|(k, v)| (v, k))
        .collect();
    incoming.sort_unstable();
    for w in incoming.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Structural(format!(
                "vertex {} appears twice in batch",
                w[0].0
            )));
        }
    }
    if let Some(&(v, _)) = incoming.iter().find(|(v, _)| base.contains(*v)) {
        return Err(Error::Structural(format!(
            "batch vertex {v} already present in snapshot"
        )));
    }

    // Sorted merge of the two vertex lists; remember where old vertices land.
    let n = base.num_vertices() + incoming.len();
    let mut vertices = Vec::with_capacity(n);
    let mut features = Matrix::zeros(n, dim);
    let mut old_to_new = Vec::with_capacity(base.num_vertices());
    let (mut i, mut j) = (0, 0);
    while i < base.num_vertices() || j < incoming.len() {
        let take_old =
            j == incoming.len() || (i < base.num_vertices() && base.vertices[i] < incoming[j].0);
        let slot = vertices.len();
        if take_old {
            vertices.push(base.vertices[i]);
            features.row_mut(slot).copy_from_slice(base.features.row(i));
            old_to_new.push(slot);
            i += 1;
        } else {
            vertices.push(incoming[j].0);
            features
                .row_mut(slot)
                .copy_from_slice(batch_features.row(incoming[j].1));
            j += 1;
        }
    }
    let mut adjacency = vec![Vec::new(); n];
    for (old, ns) in base.adjacency.iter().enumerate() {
        adjacency[old_to_new[old]] = ns.iter().map(|&w| old_to_new[w]).collect();
    }
    let mut snap = GraphSnapshot {
        vertices,
        adjacency,
        features,
        task_horizon: base.task_horizon + 1,
    };

    let mut seen = HashSet::with_capacity(new_edges.len());
    for &(u, v) in new_edges {
        let (a, b) = snap.checked_edge(u, v)?;
        if base.contains(u) && base.contains(v) {
            return Err(Error::Structural(format!(
                "edge ({u}, {v}) joins two pre-existing vertices"
            )));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::Structural(format!("duplicate edge ({u}, {v})")));
        }
        snap.adjacency[a].push(b);
        snap.adjacency[b].push(a);
    }
    snap.adjacency.iter_mut().for_each(|ns| ns.sort_unstable());
    Ok(snap)
}

/// The k-hop neighbourhood subgraph of one root vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoGraph {
    pub root: VertexId,
    pub k: usize,
    /// Global ids within `k` hops of `root`, sorted.
    pub local_vertices: Vec<VertexId>,
    /// Adjacency among `local_vertices`, as indices into that list.
    pub local_adjacency: Vec<Vec<usize>>,
    pub local_features: Matrix,
}

impl EgoGraph {
    pub fn edges(&self) -> Vec<(VertexId, VertexId)> {
        let mut out = Vec::new();
        for (i, ns) in self.local_adjacency.iter().enumerate() {
            for &j in ns {
                if i < j {
                    out.push((self.local_vertices[i], self.local_vertices[j]));
                }
            }
        }
        out
    }

    /// The ego graph as a standalone snapshot (same global ids).
    pub fn to_snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            vertices: self.local_vertices.clone(),
            adjacency: self.local_adjacency.clone(),
            features: self.local_features.clone(),
            task_horizon: 0,
        }
    }
}

pub fn ego_graph(snapshot: &GraphSnapshot, root: VertexId, k: usize) -> Result<EgoGraph> {
    let r = snapshot
        .position(root)
        .ok_or_else(|| Error::NotFound(format!("root vertex {root}")))?;
    let ball = snapshot.ball_local(&[r], k);
    let sub = restrict(snapshot, &ball);
    Ok(EgoGraph {
        root,
        k,
        local_vertices: sub.vertices,
        local_adjacency: sub.adjacency,
        local_features: sub.features,
    })
}

/// Restriction to sorted local indices `keep`.
fn restrict(snapshot: &GraphSnapshot, keep: &[usize]) -> GraphSnapshot {
    let mut remap = vec![usize::MAX; snapshot.num_vertices()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let adjacency = keep
        .iter()
        .map(|&old| {
            snapshot.adjacency[old]
                .iter()
                .filter_map(|&w| (remap[w] != usize::MAX).then_some(remap[w]))
                .collect()
        })
        .collect();
    GraphSnapshot {
        vertices: keep.iter().map(|&i| snapshot.vertices[i]).collect(),
        adjacency,
        features: snapshot.features.select_rows(keep),
        task_horizon: snapshot.task_horizon,
    }
}

/// Subgraph induced by `keep`: edges survive only when both endpoints are kept.
pub fn induced_subgraph(snapshot: &GraphSnapshot, keep: &[VertexId]) -> Result<GraphSnapshot> {
    let mut local = Vec::with_capacity(keep.len());
    for &id in keep {
        local.push(
            snapshot
                .position(id)
                .ok_or_else(|| Error::Structural(format!("unknown vertex {id} in keep set")))?,
        );
    }
    local.sort_unstable();
    local.dedup();
    Ok(restrict(snapshot, &local))
}

/// Induced subgraph on the union of `k`-hop balls around `roots`.
pub fn ball_subgraph(
    snapshot: &GraphSnapshot,
    roots: &[VertexId],
    k: usize,
) -> Result<GraphSnapshot> {
    let mut local = Vec::with_capacity(roots.len());
    for &id in roots {
        local.push(
            snapshot
                .position(id)
                .ok_or_else(|| Error::NotFound(format!("vertex {id}")))?,
        );
    }
    Ok(restrict(snapshot, &snapshot.ball_local(&local, k)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

/// Stratified train/valid/test assignment, deterministic for a fixed seed.
///
/// Per class, `round(n·train)` vertices go to train and `round(n·valid)` to
/// valid, the rest to test. Classes with fewer than three members are put
/// entirely in train.
pub fn split_vertices(batch: &VertexBatch, ratios: SplitRatios, seed: u64) -> Result<VertexBatch> {
    let SplitRatios { train, valid, test } = ratios;
    if [train, valid, test]
        .iter()
        .any(|r| !(0.0..=1.0).contains(r))
        || (train + valid + test - 1.0).abs() > 1e-9
    {
        return Err(Error::Precondition(format!(
            "split ratios ({train}, {valid}, {test}) must be in [0,1] and sum to 1"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Precondition("cannot split an empty batch".into()));
    }
    let mut out = batch.clone();
    for class in 0..batch.num_classes {
        let mut members: Vec<usize> = (0..batch.len())
            .filter(|&i| batch.labels[i] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            log::warn!(
                "task {}: class {class} has {} member(s); assigning all to train",
                batch.task_index,
                members.len()
            );
            members.iter().for_each(|&i| out.split[i] = Split::Train);
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(seed, class as u64));
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = ((n * train).round() as usize).min(members.len());
        let n_valid = ((n * valid).round() as usize).min(members.len() - n_train);
        for (rank, &i) in members.iter().enumerate() {
            out.split[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
