use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    accumulate_snapshot, induced_subgraph, split_vertices, GraphSnapshot, SplitRatios, VertexBatch,
    VertexId,
};
use crate::matrix::Matrix;
use crate::metrics::{
    bound_components, compute_metrics, evaluate_batch, fit_reference_head, BoundDiagnostics,
    BoundInputs, MetricsReport, PerformanceMatrix,
};
use crate::rng::derive_seed;

use super::{Learner, ModelConfig, ModelState, SsrmConfig, TaskReport, TrainerKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// One growing graph; old vertices see new neighbours.
    #[default]
    Inductive,
    /// Each batch keeps only its own edges.
    Transductive,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Inductive => "inductive",
            EvalMode::Transductive => "transductive",
        })
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inductive" => Ok(EvalMode::Inductive),
            "transductive" => Ok(EvalMode::Transductive),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: TrainerKind,
    pub mode: EvalMode,
    pub ssrm: SsrmConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub split: SplitRatios,
    /// Compute bound diagnostics for the last task.
    pub bounds: bool,
    pub q: f64,
    pub reference_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: TrainerKind::Bare,
            mode: EvalMode::Inductive,
            ssrm: SsrmConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            split: SplitRatios::default(),
            bounds: true,
            q: 1.0,
            reference_epochs: 200,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.ssrm.validate()?;
        self.model.validate()?;
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(Error::Config(format!(
                "loss exponent q={} must be >= 1",
                self.q
            )));
        }
        Ok(())
    }
}

/// Batches with splits assigned and the accumulated snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub batches: Vec<VertexBatch>,
    pub snapshots: Vec<GraphSnapshot>,
    /// Edges that arrived with each batch.
    pub batch_edges: Vec<Vec<(VertexId, VertexId)>>,
}

impl SequenceData {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.snapshots.first().map_or(0, GraphSnapshot::feature_dim)
    }
}

/// Splits every batch and builds the snapshot sequence. Each edge arrives
/// with the later of its endpoints' batches; `features` has one row per id.
pub fn prepare_sequence(
    batches: &[VertexBatch],
    edges: &[(VertexId, VertexId)],
    features: &Matrix,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SequenceData> {
    let mut owner = vec![usize::MAX; features.rows()];
    for (t, b) in batches.iter().enumerate() {
        if b.task_index != t + 1 {
            return Err(Error::Structural(format!(
                "batch {} carries task index {}",
                t + 1,
                b.task_index
            )));
        }
        for &v in &b.vertices {
            let slot = owner
                .get_mut(v)
                .ok_or_else(|| Error::Structural(format!("vertex {v} has no feature row")))?;
            if *slot != usize::MAX {
                return Err(Error::Structural(format!("vertex {v} is in two batches")));
            }
            *slot = t;
        }
    }
    let mut batch_edges = vec![Vec::new(); batches.len()];
    for &(u, v) in edges {
        let tu = owner.get(u).copied().unwrap_or(usize::MAX);
        let tv = owner.get(v).copied().unwrap_or(usize::MAX);
        if tu == usize::MAX || tv == usize::MAX {
            return Err(Error::Structural(format!(
                "edge ({u}, {v}) touches an unassigned vertex"
            )));
        }
        batch_edges[tu.max(tv)].push((u.min(v), u.max(v)));
    }
    let mut split = Vec::with_capacity(batches.len());
    let mut snapshots = Vec::with_capacity(batches.len());
    let mut current = GraphSnapshot::empty(features.cols());
    for (t, b) in batches.iter().enumerate() {
        let sb = split_vertices(b, ratios, derive_seed(seed, t as u64))?;
        current = accumulate_snapshot(
            &current,
            &sb,
            &batch_edges[t],
            &features.select_rows(&b.vertices),
        )?;
        snapshots.push(current.clone());
        split.push(sb);
    }
    Ok(SequenceData {
        batches: split,
        snapshots,
        batch_edges,
    })
}

/// Snapshots that keep only edges inside a single batch.
pub fn transductive_snapshots(data: &SequenceData) -> Result<Vec<GraphSnapshot>> {
    let mut out = Vec::with_capacity(data.len());
    let mut current = GraphSnapshot::empty(data.feature_dim());
    let last = data
        .snapshots
        .last()
        .ok_or_else(|| Error::Precondition("empty sequence".into()))?;
    for (b, edges) in data.batches.iter().zip(&data.batch_edges) {
        let members: HashSet<VertexId> = b.vertices.iter().copied().collect();
        let own: Vec<(VertexId, VertexId)> = edges
            .iter()
            .copied()
            .filter(|(u, v)| members.contains(u) && members.contains(v))
            .collect();
        let rows = last.features().select_rows(
            &b.vertices
                .iter()
                .map(|&v| last.position(v).expect("vertex in final snapshot"))
                .collect::<Vec<_>>(),
        );
        current = accumulate_snapshot(&current, b, &own, &rows)?;
        out.push(current.clone());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Aborted { task: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: RunConfig,
    pub status: RunStatus,
    pub matrix: PerformanceMatrix,
    pub metrics: Option<MetricsReport>,
    pub bounds: Option<BoundDiagnostics>,
    pub reports: Vec<TaskReport>,
    pub model: ModelState,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }
}

/// Trains every task in order and fills the performance matrix.
///
/// A failure after validation does not return an error: the run stops with
/// [`RunStatus::Aborted`] and keeps what was computed so far.
pub fn run_sequence(data: &SequenceData, config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Precondition("sequence has no tasks".into()));
    }
    let train_snaps = match config.mode {
        EvalMode::Inductive => data.snapshots.clone(),
        EvalMode::Transductive => transductive_snapshots(data)?,
    };
    let mut learner = Learner::new(
        data.feature_dim(),
        &config.model,
        config.kind,
        config.ssrm.clone(),
        derive_seed(config.seed, 2),
    )?;
    let mut result = RunResult {
        config: config.clone(),
        status: RunStatus::Complete,
        matrix: PerformanceMatrix::new(),
        metrics: None,
        bounds: None,
        reports: Vec::new(),
        model: learner.model.clone(),
    };
    for i in 0..data.len() {
        let step = (|| -> Result<(TaskReport, Vec<f64>)> {
            let report = learner.train_task(&data.batches[..=i], &train_snaps[i])?;
            let mut row = Vec::with_capacity(i + 1);
            for b in &data.batches[..=i] {
                let acc = match config.mode {
                    EvalMode::Inductive => evaluate_batch(&learner.model, &train_snaps[i], b)?,
                    EvalMode::Transductive => {
                        let own = induced_subgraph(&train_snaps[i], &b.vertices)?;
                        evaluate_batch(&learner.model, &own, b)?
                    }
                };
                row.push(acc);
            }
            Ok((report, row))
        })();
        match step {
            Ok((report, row)) => {
                result.reports.push(report);
                result.matrix.push_row(row)?;
            }
            Err(e) => {
                log::warn!("run aborted at task {}: {e}", i + 1);
                result.status = RunStatus::Aborted {
                    task: i + 1,
                    reason: e.to_string(),
                };
                break;
            }
        }
    }
    result.model = learner.model.clone();
    if !result.matrix.is_empty() {
        let mut m = compute_metrics(&result.matrix)?;
        if config.kind == TrainerKind::Joint {
            m.faf = None;
        }
        result.metrics = Some(m);
    }
    let m = data.len();
    if config.bounds && result.is_complete() && m >= 2 {
        match diagnose(data, &train_snaps, &learner.model, config) {
            Ok(b) => result.bounds = Some(b),
            Err(e) => log::warn!("bound diagnostics unavailable: {e}"),
        }
    }
    Ok(result)
}

fn diagnose(
    data: &SequenceData,
    snaps: &[GraphSnapshot],
    model: &ModelState,
    config: &RunConfig,
) -> Result<BoundDiagnostics> {
    let m = data.len();
    let seed = derive_seed(config.seed, 3);
    let reference = fit_reference_head(
        &model.gnn,
        &snaps[m - 1],
        &data.batches,
        config.reference_epochs,
        0.05,
        derive_seed(seed, 0),
    );
    let reference = match reference {
        Ok(h) => Some(h),
        Err(e) => {
            log::warn!("reference head unavailable: {e}");
            None
        }
    };
    let inputs = BoundInputs {
        gnn: &model.gnn,
        heads: &model.heads,
        before: &snaps[m - 2],
        after: &snaps[m - 1],
        old: &data.batches[..m - 1],
        new: &data.batches[m - 1],
    };
    bound_components(
        &inputs,
        config.q,
        &config.ssrm.kernel,
        config.ssrm.mmd_subsample,
        reference.as_ref(),
        derive_seed(seed, 1),
    )
}
