//! Continual-learning trainers.
//!
//! A [`Learner`] owns the encoder, the per-task heads and the replay memory.
//! [`Learner::train_task`] fits one task according to a [`TrainerKind`];
//! [`run_sequence`] drives a whole task sequence and evaluates the
//! performance matrix after every task.

mod memory;
mod sequence;
mod ssrm;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use memory::{select_memory, MemoryEntry, MemoryStore, MemoryStrategy};
pub use sequence::{
    prepare_sequence, run_sequence, transductive_snapshots, EvalMode, RunConfig, RunResult,
    RunStatus, SequenceData,
};
pub use ssrm::{ssrm_from_embeddings, ssrm_regularizer, EmbeddingTerms, SsrmTerms};
pub use trainer::{EpochRecord, Learner, TaskReport};

use crate::error::{Error, Result};
use crate::mmd::KernelConfig;
use crate::nn::{Activation, GnnParams, HeadParams, Linear};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainerKind {
    #[serde(rename = "bare")]
    Bare,
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "replay")]
    Replay,
    #[serde(rename = "bare+ssrm")]
    BareSsrm,
    #[serde(rename = "replay+ssrm")]
    ReplaySsrm,
}

impl TrainerKind {
    pub fn uses_replay(self) -> bool {
        matches!(self, TrainerKind::Replay | TrainerKind::ReplaySsrm)
    }

    pub fn uses_ssrm(self) -> bool {
        matches!(self, TrainerKind::BareSsrm | TrainerKind::ReplaySsrm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainerKind::Bare => "bare",
            TrainerKind::Joint => "joint",
            TrainerKind::Replay => "replay",
            TrainerKind::BareSsrm => "bare+ssrm",
            TrainerKind::ReplaySsrm => "replay+ssrm",
        }
    }
}

impl fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bare" => TrainerKind::Bare,
            "joint" => TrainerKind::Joint,
            "replay" => TrainerKind::Replay,
            "bare+ssrm" => TrainerKind::BareSsrm,
            "replay+ssrm" => TrainerKind::ReplaySsrm,
            other => return Err(Error::Config(format!("unknown trainer kind '{other}'"))),
        })
    }
}

/// Regularizer weights and training controls.
///
/// `alpha` weighs the drift of old-vertex embeddings between the previous and
/// the current graph; `beta` weighs old-vertex embeddings (previous graph)
/// against the new batch (current graph).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsrmConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Vertices stored per past task.
    pub memory_budget: usize,
    pub memory_strategy: MemoryStrategy,
    /// Sample cap per side of each MMD term.
    pub mmd_subsample: usize,
    pub kernel: KernelConfig,
    pub epochs: usize,
    pub lr: f64,
    /// Early stop when the total loss improved by less than `min_improvement`
    /// over the last `patience` epochs.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for SsrmConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.5,
            memory_budget: 20,
            memory_strategy: MemoryStrategy::PerClassUniform,
            mmd_subsample: 256,
            kernel: KernelConfig::default(),
            epochs: 200,
            lr: 5e-3,
            patience: 20,
            min_improvement: 1e-5,
        }
    }
}

impl SsrmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "alpha={} and beta={} must be nonnegative",
                self.alpha, self.beta
            )));
        }
        if self.memory_budget < 1 {
            return Err(Error::Config("memory budget must be at least 1".into()));
        }
        if self.mmd_subsample < 2 {
            return Err(Error::Config("MMD subsample must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} invalid", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        self.kernel.validate()
    }

    pub(crate) fn regularizer_active(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Number of aggregation layers, i.e. the hop count of the ego graph.
    pub layers: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(
                "hidden width and layer count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dims(&self, input: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(std::iter::repeat_n(self.hidden, self.layers))
            .collect()
    }
}

/// Encoder plus per-task heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub gnn: GnnParams,
    pub heads: HeadParams,
    /// Number of tasks trained so far.
    pub horizon: usize,
    seed: u64,
}

impl ModelState {
    pub fn new(input_dim: usize, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            gnn: GnnParams::init(&cfg.dims(input_dim), cfg.activation, derive_seed(seed, 0))?,
            heads: HeadParams::default(),
            horizon: 0,
            seed,
        })
    }

    pub fn from_parts(gnn: GnnParams, heads: HeadParams) -> Self {
        Self {
            gnn,
            heads,
            horizon: 0,
            seed: 0,
        }
    }

    /// Adds heads until one exists for `task_index`.
    pub fn ensure_head(&mut self, task_index: usize, classes: usize) {
        while self.heads.len() < task_index {
            let t = self.heads.len() + 1;
            let head = Linear::glorot(
                self.gnn.output_dim(),
                classes,
                derive_seed(self.seed, 1000 + t as u64),
            );
            self.heads.push(head);
        }
    }

    pub fn num_params(&self) -> usize {
        self.gnn.num_params()
            + self
                .heads
                .heads
                .iter()
                .map(Linear::num_params)
                .sum::<usize>()
    }

    /// Encoder parameters followed by the heads in task order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.gnn.write_flat(&mut out);
        self.heads.heads.iter().for_each(|h| h.write_flat(&mut out));
        out
    }

    pub fn assign(&mut self, flat: &[f64]) {
        let mut used = self.gnn.read_flat(flat);
        for h in &mut self.heads.heads {
            used += h.read_flat(&flat[used..]);
        }
        debug_assert_eq!(used, flat.len());
    }
}
