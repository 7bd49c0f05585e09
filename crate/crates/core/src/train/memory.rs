use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ball_subgraph, GraphSnapshot, Split, VertexBatch, VertexId};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryStrategy {
    Uniform,
    #[default]
    PerClassUniform,
}

/// Stored vertices of one past task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub task_index: usize,
    pub vertices: Vec<VertexId>,
    pub labels: Vec<usize>,
}

/// Replay memory plus the part of the previous snapshot needed to embed it.
///
/// `retained` is the union of the `hops`-hop balls of all stored vertices in
/// the snapshot they were last refreshed against, which is enough to recompute
/// their embeddings exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryStore {
    pub entries: Vec<MemoryEntry>,
    retained: Option<GraphSnapshot>,
    hops: usize,
}

impl MemoryStore {
    pub fn new(hops: usize) -> Self {
        Self {
            entries: Vec::new(),
            retained: None,
            hops,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.vertices.is_empty())
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.vertices.len()).sum()
    }

    /// All stored vertices, task by task.
    pub fn vertices(&self) -> Vec<VertexId> {
        self.entries
            .iter()
            .flat_map(|e| e.vertices.iter().copied())
            .collect()
    }

    pub fn retained(&self) -> Option<&GraphSnapshot> {
        self.retained.as_ref()
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    /// Samples up to `budget` train vertices from `batch` and stores them.
    pub fn add_batch(
        &mut self,
        batch: &VertexBatch,
        budget: usize,
        strategy: MemoryStrategy,
        seed: u64,
    ) -> Result<()> {
        let (train, labels) = batch.part(Split::Train);
        if train.is_empty() {
            return Err(Error::Precondition(format!(
                "task {} has an empty train split",
                batch.task_index
            )));
        }
        let mut rng = rng_from_seed(derive_seed(seed, batch.task_index as u64));
        let mut picked: Vec<usize> = match strategy {
            MemoryStrategy::Uniform => {
                let mut idx: Vec<usize> = (0..train.len()).collect();
                idx.shuffle(&mut rng);
                idx.truncate(budget);
                idx
            }
            MemoryStrategy::PerClassUniform => {
                let per_class = budget.div_ceil(batch.num_classes.max(1));
                let mut out = Vec::new();
                for class in 0..batch.num_classes {
                    let mut members: Vec<usize> =
                        (0..train.len()).filter(|&i| labels[i] == class).collect();
                    members.shuffle(&mut rng);
                    members.truncate(per_class);
                    out.extend(members);
                }
                out.truncate(budget);
                out
            }
        };
        picked.sort_unstable();
        self.entries.push(MemoryEntry {
            task_index: batch.task_index,
            vertices: picked.iter().map(|&i| train[i]).collect(),
            labels: picked.iter().map(|&i| labels[i]).collect(),
        });
        Ok(())
    }

    /// Re-extracts the retained subgraph from `snapshot`.
    pub fn retain_from(&mut self, snapshot: &GraphSnapshot) -> Result<()> {
        self.retained = if self.is_empty() {
            None
        } else {
            Some(ball_subgraph(snapshot, &self.vertices(), self.hops)?)
        };
        Ok(())
    }
}

/// Builds a memory over `past_batches` and retains its `hops`-hop view of
/// `snapshot` (the snapshot before the next batch arrives).
pub fn select_memory(
    past_batches: &[VertexBatch],
    budget: usize,
    strategy: MemoryStrategy,
    seed: u64,
    snapshot: &GraphSnapshot,
    hops: usize,
) -> Result<MemoryStore> {
    if budget < 1 {
        return Err(Error::Precondition(
            "memory budget must be at least 1".into(),
        ));
    }
    if past_batches.is_empty() {
        return Err(Error::Precondition("no past batches to sample from".into()));
    }
    let mut store = MemoryStore::new(hops);
    for b in past_batches {
        store.add_batch(b, budget, strategy, seed)?;
    }
    store.retain_from(snapshot)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csbm::{generate_csbm, CsbmParams};
    use crate::graph::{split_vertices, SplitRatios};

    fn setup() -> (Vec<VertexBatch>, Vec<GraphSnapshot>) {
        let p = CsbmParams::scalar(2.0, 0.2, 0.05, vec![(10, 10), (10, 10)]);
        let seq = generate_csbm(&p, 3).unwrap();
        let batches = seq
            .batches
            .iter()
            .map(|b| split_vertices(b, SplitRatios::default(), 1).unwrap())
            .collect();
        (batches, seq.snapshots().unwrap())
    }

    #[test]
    fn saturated_budget_stores_all_train_vertices() {
        let (b, s) = setup();
        let m = select_memory(&b[..1], 100, MemoryStrategy::Uniform, 0, &s[0], 2).unwrap();
        assert_eq!(m.len(), b[0].count(Split::Train));
    }

    #[test]
    fn per_class_split_and_determinism() {
        let (b, s) = setup();
        let m = select_memory(&b[..1], 10, MemoryStrategy::PerClassUniform, 5, &s[0], 2).unwrap();
        let ones = m.entries[0].labels.iter().filter(|&&l| l == 1).count();
        assert_eq!(m.len(), 10);
        assert_eq!(ones, 5);
        let again =
            select_memory(&b[..1], 10, MemoryStrategy::PerClassUniform, 5, &s[0], 2).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn odd_budget_is_respected() {
        let (b, s) = setup();
        let m = select_memory(&b, 7, MemoryStrategy::PerClassUniform, 1, &s[1], 1).unwrap();
        assert!(m.entries.iter().all(|e| e.vertices.len() <= 7));
    }

    #[test]
    fn retained_view_contains_full_balls() {
        let (b, s) = setup();
        let m = select_memory(&b, 6, MemoryStrategy::Uniform, 2, &s[1], 2).unwrap();
        let view = m.retained().unwrap();
        for v in m.vertices() {
            let full = crate::graph::ego_graph(&s[1], v, 2).unwrap();
            let kept = crate::graph::ego_graph(view, v, 2).unwrap();
            assert_eq!(full, kept);
        }
    }

    #[test]
    fn empty_train_split_is_rejected() {
        let batch = VertexBatch {
            split: vec![Split::Test; 3],
            ..VertexBatch::new(1, vec![0, 1, 2], vec![0, 1, 0], 2).unwrap()
        };
        let snap = GraphSnapshot::empty(1);
        assert!(select_memory(&[batch], 4, MemoryStrategy::Uniform, 0, &snap, 1).is_err());
    }
}
