use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, Split, VertexBatch, VertexId};
use crate::matrix::Matrix;
use crate::nn::{
    adam_step, cross_entropy_with_grad, head_forward, GnnParams, OptState, Propagation,
};
use crate::rng::derive_seed;

use super::ssrm::{picked_terms, Picks};
use super::{MemoryStore, ModelConfig, ModelState, SsrmConfig, TrainerKind};

/// Loss terms of one optimization step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub task: usize,
    pub epoch: usize,
    pub task_loss: f64,
    pub replay_loss: f64,
    pub reg: f64,
    pub drift: f64,
    pub crosstask: f64,
    pub total: f64,
    pub epoch_seconds: f64,
    /// Time spent computing the regularizer and its gradient.
    pub reg_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_index: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub final_loss: f64,
    pub records: Vec<EpochRecord>,
}

/// Model, memory and training policy carried across tasks.
#[derive(Clone, Debug)]
pub struct Learner {
    pub model: ModelState,
    pub memory: MemoryStore,
    pub kind: TrainerKind,
    pub cfg: SsrmConfig,
    seed: u64,
}

/// One supervised group: target rows in the embedding matrix, their head and labels.
struct Group {
    head: usize,
    rows: Vec<usize>,
    labels: Vec<usize>,
}

impl Learner {
    pub fn new(
        input_dim: usize,
        model_cfg: &ModelConfig,
        kind: TrainerKind,
        cfg: SsrmConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model: ModelState::new(input_dim, model_cfg, seed)?,
            memory: MemoryStore::new(model_cfg.layers),
            kind,
            cfg,
            seed,
        })
    }

    fn keeps_memory(&self) -> bool {
        self.kind.uses_replay() || self.kind.uses_ssrm()
    }

    /// Whether memory vertices take part in the objective.
    fn memory_in_objective(&self) -> bool {
        !self.memory.is_empty()
            && (self.kind.uses_replay() || (self.kind.uses_ssrm() && self.cfg.regularizer_active()))
    }

    /// Fits the newest batch of `batches` on `snapshot`.
    ///
    /// For [`TrainerKind::Joint`] every batch in `batches` is fitted at once.
    /// On divergence the parameters of the last finite step are kept and the
    /// error is returned.
    pub fn train_task(
        &mut self,
        batches: &[VertexBatch],
        snapshot: &GraphSnapshot,
    ) -> Result<TaskReport> {
        let newest = batches
            .last()
            .ok_or_else(|| Error::Precondition("no batch to train on".into()))?;
        let task = newest.task_index;
        if self.kind != TrainerKind::Joint && task != self.model.horizon + 1 {
            return Err(Error::Precondition(format!(
                "task {task} does not follow horizon {}",
                self.model.horizon
            )));
        }
        for b in batches {
            self.model.ensure_head(b.task_index, b.num_classes);
        }

        let mut targets: Vec<VertexId> = Vec::new();
        let mut groups: Vec<Group> = Vec::new();
        let fitted: &[VertexBatch] = if self.kind == TrainerKind::Joint {
            batches
        } else {
            std::slice::from_ref(newest)
        };
        for b in fitted {
            let (v, l) = b.part(Split::Train);
            if v.is_empty() {
                return Err(Error::Precondition(format!(
                    "task {} has an empty train split",
                    b.task_index
                )));
            }
            groups.push(Group {
                head: b.task_index,
                rows: (targets.len()..targets.len() + v.len()).collect(),
                labels: l,
            });
            targets.extend(v);
        }
        let new_rows = groups.last().map(|g| g.rows.clone()).unwrap_or_default();
        let task_groups = groups.len();

        let use_memory = self.kind != TrainerKind::Joint && self.memory_in_objective();
        let mem_start = targets.len();
        if use_memory {
            for e in &self.memory.entries {
                groups.push(Group {
                    head: e.task_index,
                    rows: (targets.len()..targets.len() + e.vertices.len()).collect(),
                    labels: e.labels.clone(),
                });
                targets.extend(&e.vertices);
            }
        }
        let mem_rows: Vec<usize> = (mem_start..targets.len()).collect();
        let replay = use_memory && self.kind.uses_replay();
        let regularize = use_memory && self.kind.uses_ssrm() && self.cfg.regularizer_active();

        let depth = self.model.gnn.depth();
        let plan = Propagation::new(snapshot, &targets, depth)?;
        let prev = if regularize {
            let retained = self
                .memory
                .retained()
                .ok_or_else(|| Error::Precondition("memory has no retained graph".into()))?;
            Some((self.memory.vertices(), retained))
        } else {
            None
        };

        let task_seed = derive_seed(self.seed, 10_000 + task as u64);
        let mut opt = OptState::new(self.cfg.lr);
        let mut records: Vec<EpochRecord> = Vec::new();
        let mut stopped_early = false;
        for epoch in 0..self.cfg.epochs {
            let started = Instant::now();
            let cache = plan.forward(&self.model.gnn, snapshot)?;
            let emb = &cache.output;
            let mut d_emb = Matrix::zeros(emb.rows(), emb.cols());
            let mut head_grads: Vec<Option<crate::nn::Linear>> = vec![None; self.model.heads.len()];
            let mut task_loss = 0.0;
            let mut replay_loss = 0.0;
            let mem_total = mem_rows.len() as f64;
            for (gi, g) in groups.iter().enumerate() {
                let is_memory = gi >= task_groups;
                if is_memory && !replay {
                    continue;
                }
                if g.rows.is_empty() {
                    continue;
                }
                let x = emb.select_rows(&g.rows);
                let head = self.model.heads.head(g.head)?;
                let logits = head_forward(head, &x)?;
                let (loss, mut dlogits) = cross_entropy_with_grad(&logits, &g.labels)?;
                if is_memory {
                    // pooled mean over all memory vertices
                    let w = g.rows.len() as f64 / mem_total;
                    replay_loss += w * loss;
                    dlogits.scale(w);
                } else {
                    task_loss += loss;
                }
                let (hg, dx) = head.backward(&x, &dlogits)?;
                match &mut head_grads[g.head - 1] {
                    Some(acc) => acc.add_assign(&hg),
                    slot => *slot = Some(hg),
                }
                for (k, &r) in g.rows.iter().enumerate() {
                    for (a, b) in d_emb.row_mut(r).iter_mut().zip(dx.row(k)) {
                        *a += b;
                    }
                }
            }

            let mut reg = (0.0, 0.0, 0.0);
            let mut reg_seconds = 0.0;
            let mut gnn_grad: GnnParams;
            if let Some((mem, retained)) = &prev {
                let t0 = Instant::now();
                let picks = Picks::new(
                    mem.len(),
                    new_rows.len(),
                    self.cfg.mmd_subsample,
                    derive_seed(task_seed, epoch as u64),
                );
                let picked: Vec<VertexId> = picks.mem.iter().map(|&i| mem[i]).collect();
                let prev_plan = Propagation::new(retained, &picked, depth)?;
                let before = prev_plan.forward(&self.model.gnn, retained)?;
                let zaft = emb.select_rows(&mem_rows);
                let znew = emb.select_rows(&new_rows);
                let terms = picked_terms(&before.output, &zaft, &znew, &picks, &self.cfg)?;
                for (k, &r) in mem_rows.iter().enumerate() {
                    for (a, b) in d_emb.row_mut(r).iter_mut().zip(terms.d_aft.row(k)) {
                        *a += b;
                    }
                }
                for (k, &r) in new_rows.iter().enumerate() {
                    for (a, b) in d_emb.row_mut(r).iter_mut().zip(terms.d_new.row(k)) {
                        *a += b;
                    }
                }
                gnn_grad = before.backward(&prev_plan, &self.model.gnn, &terms.d_bef)?;
                reg = (terms.reg, terms.drift, terms.crosstask);
                reg_seconds = t0.elapsed().as_secs_f64();
                gnn_grad.add_assign(&cache.backward(&plan, &self.model.gnn, &d_emb)?);
            } else {
                gnn_grad = cache.backward(&plan, &self.model.gnn, &d_emb)?;
            }
            let total = task_loss + replay_loss + reg.0;

            let mut grads = Vec::with_capacity(self.model.num_params());
            gnn_grad.write_flat(&mut grads);
            for (h, g) in self.model.heads.heads.iter().zip(&head_grads) {
                match g {
                    Some(g) => g.write_flat(&mut grads),
                    None => grads.extend(std::iter::repeat_n(0.0, h.num_params())),
                }
            }
            if !total.is_finite() {
                return Err(Error::Divergence {
                    task,
                    epoch,
                    reason: format!("non-finite loss {total}"),
                });
            }
            let mut params = self.model.flatten();
            if let Err(e) = adam_step(&mut params, &grads, &mut opt) {
                let reason = match e {
                    Error::Divergence { reason, .. } => reason,
                    other => other.to_string(),
                };
                return Err(Error::Divergence {
                    task,
                    epoch,
                    reason,
                });
            }
            if params.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    task,
                    epoch,
                    reason: "parameter update overflowed".into(),
                });
            }
            self.model.assign(&params);
            records.push(EpochRecord {
                task,
                epoch,
                task_loss,
                replay_loss,
                reg: reg.0,
                drift: reg.1,
                crosstask: reg.2,
                total,
                epoch_seconds: started.elapsed().as_secs_f64(),
                reg_seconds,
            });
            let p = self.cfg.patience;
            if p > 0 && records.len() > p {
                let then = records[records.len() - 1 - p].total;
                if then - total < self.cfg.min_improvement {
                    stopped_early = true;
                    break;
                }
            }
        }

        self.model.horizon = task;
        if self.kind != TrainerKind::Joint && self.keeps_memory() {
            self.memory.add_batch(
                newest,
                self.cfg.memory_budget,
                self.cfg.memory_strategy,
                self.seed,
            )?;
            self.memory.retain_from(snapshot)?;
        }
        Ok(TaskReport {
            task_index: task,
            epochs_run: records.len(),
            stopped_early,
            final_loss: records.last().map_or(f64::NAN, |r| r.total),
            records,
        })
    }

    /// Logits of `vertices` under the head of `task_index`.
    pub fn logits(
        &self,
        snapshot: &GraphSnapshot,
        task_index: usize,
        vertices: &[VertexId],
    ) -> Result<Matrix> {
        let emb = crate::nn::gnn_forward(&self.model.gnn, snapshot, vertices)?;
        head_forward(self.model.heads.head(task_index)?, &emb)
    }
}
