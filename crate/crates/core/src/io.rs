//! Plain-text graph bundles, experiment configs and run artifacts.
//!
//! A bundle directory holds `edges.txt`, `features.csv`, `labels.csv`,
//! `tasks.csv` and a `manifest.json` with counts and SHA-256 checksums. A run
//! directory holds the resolved config echo, the performance matrix, metric
//! and bound documents, the per-epoch loss log and a manifest.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::csbm::{CsbmParams, CsbmSequence};
use crate::error::{Error, Result};
use crate::graph::{SplitRatios, VertexBatch, VertexId};
use crate::matrix::Matrix;
use crate::metrics::{compute_metrics, BoundDiagnostics, MetricsReport, PerformanceMatrix};
use crate::mmd::{KernelConfig, NormMode};
use crate::nn::Activation;
use crate::train::{
    EpochRecord, EvalMode, MemoryStrategy, ModelConfig, RunConfig, RunResult, RunStatus,
    SsrmConfig, TrainerKind,
};

pub const BUNDLE_FORMAT: &str = "ngil-bundle/1";
pub const RUN_FORMAT: &str = "ngil-run/1";

const EDGES: &str = "edges.txt";
const FEATURES: &str = "features.csv";
const LABELS: &str = "labels.csv";
const TASKS: &str = "tasks.csv";
const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn join_floats(values: &[f64]) -> String {
    let mut s = String::new();
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        write!(s, "{v}").expect("write to string");
    }
    s
}

/// One two-class task: vertices labelled `class_a` or `class_b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_index: usize,
    pub class_a: usize,
    pub class_b: usize,
}

/// In-memory form of a bundle directory.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBundle {
    /// `(u, v)` with `u < v`.
    pub edges: Vec<(VertexId, VertexId)>,
    /// One row per vertex id.
    pub features: Matrix,
    /// Global class per vertex id.
    pub labels: Vec<usize>,
    pub tasks: Vec<TaskSpec>,
}

impl GraphBundle {
    pub fn num_vertices(&self) -> usize {
        self.labels.len()
    }

    /// CSBM sequence as a bundle; batch `t` uses global classes `2(t−1)` and `2(t−1)+1`.
    pub fn from_csbm(seq: &CsbmSequence) -> Self {
        let mut labels = vec![0; seq.features.rows()];
        let mut tasks = Vec::with_capacity(seq.batches.len());
        for (t, b) in seq.batches.iter().enumerate() {
            for (&v, &c) in b.vertices.iter().zip(&b.labels) {
                labels[v] = 2 * t + c;
            }
            tasks.push(TaskSpec {
                task_index: t + 1,
                class_a: 2 * t,
                class_b: 2 * t + 1,
            });
        }
        let mut edges = seq.all_edges();
        edges.sort_unstable();
        Self {
            edges,
            features: seq.features.clone(),
            labels,
            tasks,
        }
    }

    /// Batches in task order with task-local labels (0 for `class_a`).
    /// Every vertex is tagged train; splits are assigned later.
    pub fn batches(&self) -> Result<Vec<VertexBatch>> {
        let mut owner: HashMap<usize, (usize, usize)> = HashMap::new();
        for (t, spec) in self.tasks.iter().enumerate() {
            if spec.task_index != t + 1 {
                return Err(Error::Structural(format!(
                    "task {} listed at position {}",
                    spec.task_index,
                    t + 1
                )));
            }
            for (local, class) in [(0, spec.class_a), (1, spec.class_b)] {
                if owner.insert(class, (t, local)).is_some() {
                    return Err(Error::Structural(format!(
                        "class {class} appears in two tasks"
                    )));
                }
            }
        }
        let mut vertices = vec![Vec::new(); self.tasks.len()];
        let mut local = vec![Vec::new(); self.tasks.len()];
        for (v, class) in self.labels.iter().enumerate() {
            let &(t, l) = owner.get(class).ok_or_else(|| {
                Error::Structural(format!("vertex {v} has class {class} in no task"))
            })?;
            vertices[t].push(v);
            local[t].push(l);
        }
        vertices
            .into_iter()
            .zip(local)
            .enumerate()
            .map(|(t, (v, l))| {
                if v.is_empty() {
                    return Err(Error::Structural(format!("task {} has no vertices", t + 1)));
                }
                VertexBatch::new(t + 1, v, l, 2)
            })
            .collect()
    }
}

/// Writes `bundle` into `dir` (created if needed) and returns the manifest.
pub fn write_graph_bundle(bundle: &GraphBundle, dir: &Path) -> Result<BTreeMap<String, Value>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut edges = String::new();
    for (u, v) in &bundle.edges {
        writeln!(edges, "{u} {v}").expect("write to string");
    }
    let mut features = String::new();
    for row in bundle.features.iter_rows() {
        features.push_str(&join_floats(row));
        features.push('\n');
    }
    let mut labels = String::from("id,label\n");
    for (v, l) in bundle.labels.iter().enumerate() {
        writeln!(labels, "{v},{l}").expect("write to string");
    }
    let mut tasks = String::from("task_index,class_a,class_b\n");
    for t in &bundle.tasks {
        writeln!(tasks, "{},{},{}", t.task_index, t.class_a, t.class_b).expect("write to string");
    }
    let mut manifest = BTreeMap::new();
    manifest.insert("format".to_string(), json!(BUNDLE_FORMAT));
    manifest.insert("num_vertices".to_string(), json!(bundle.num_vertices()));
    manifest.insert("num_edges".to_string(), json!(bundle.edges.len()));
    manifest.insert("num_tasks".to_string(), json!(bundle.tasks.len()));
    manifest.insert("feature_dim".to_string(), json!(bundle.features.cols()));
    for (name, body) in [
        (EDGES, &edges),
        (FEATURES, &features),
        (LABELS, &labels),
        (TASKS, &tasks),
    ] {
        write(&dir.join(name), body)?;
        manifest.insert(
            format!("checksum_{name}"),
            json!(sha256_hex(body.as_bytes())),
        );
    }
    write(
        &dir.join(MANIFEST),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(manifest)
}

fn manifest_usize(m: &BTreeMap<String, Value>, key: &str) -> Result<usize> {
    m.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| parse_err(MANIFEST, 0, format!("missing or invalid '{key}'")))
}

fn csv_reader(bytes: &[u8], headers: bool) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .from_reader(bytes)
}

fn csv_rows(file: &str, bytes: &[u8], headers: bool) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    for rec in csv_reader(bytes, headers).records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(file, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(file: &str, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(file, line, format!("invalid {what} '{s}'")))
}

/// Loads and validates a bundle directory. Errors name the file and line.
pub fn load_graph_bundle(dir: &Path) -> Result<GraphBundle> {
    let manifest: BTreeMap<String, Value> = serde_json::from_slice(&read(&dir.join(MANIFEST))?)?;
    match manifest.get("format").and_then(Value::as_str) {
        Some(BUNDLE_FORMAT) => {}
        other => {
            return Err(Error::Config(format!(
                "unsupported bundle format {other:?}, expected {BUNDLE_FORMAT}"
            )))
        }
    }
    let mut files = HashMap::new();
    for name in [EDGES, FEATURES, LABELS, TASKS] {
        let bytes = read(&dir.join(name))?;
        let key = format!("checksum_{name}");
        let want = manifest
            .get(&key)
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err(MANIFEST, 0, format!("missing '{key}'")))?;
        if sha256_hex(&bytes) != want.to_ascii_lowercase() {
            return Err(Error::Checksum(name.to_string()));
        }
        files.insert(name, bytes);
    }
    let n = manifest_usize(&manifest, "num_vertices")?;

    let mut edges = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let text =
        std::str::from_utf8(&files[EDGES]).map_err(|e| parse_err(EDGES, 0, e.to_string()))?;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let parts: Vec<&str> = raw.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(parse_err(EDGES, line, "expected two vertex ids"));
        }
        let u: usize = field(EDGES, line, parts[0], "vertex id")?;
        let v: usize = field(EDGES, line, parts[1], "vertex id")?;
        if u >= v {
            return Err(parse_err(
                EDGES,
                line,
                format!("edge ({u}, {v}) must satisfy u < v"),
            ));
        }
        if v >= n {
            return Err(parse_err(
                EDGES,
                line,
                format!("vertex id {v} out of range 0..{n}"),
            ));
        }
        if let Some(first) = seen.insert((u, v), line) {
            return Err(parse_err(
                EDGES,
                line,
                format!("duplicate edge ({u}, {v}), first on line {first}"),
            ));
        }
        edges.push((u, v));
    }
    if edges.len() != manifest_usize(&manifest, "num_edges")? {
        return Err(Error::Structural(format!(
            "manifest edge count disagrees with {EDGES} ({} lines)",
            edges.len()
        )));
    }

    let dim = manifest_usize(&manifest, "feature_dim")?;
    let mut data = Vec::with_capacity(n * dim);
    let rows = csv_rows(FEATURES, &files[FEATURES], false)?;
    for (line, rec) in &rows {
        if rec.len() != dim {
            return Err(parse_err(
                FEATURES,
                *line,
                format!("expected {dim} values, got {}", rec.len()),
            ));
        }
        for s in rec {
            data.push(field::<f64>(FEATURES, *line, s, "number")?);
        }
    }
    if rows.len() != n {
        return Err(Error::Structural(format!(
            "{FEATURES} has {} rows for {n} vertices",
            rows.len()
        )));
    }
    let features = Matrix::from_vec(n, dim, data)?;

    let tasks_rows = csv_rows(TASKS, &files[TASKS], true)?;
    let mut tasks = Vec::new();
    let mut class_line: HashMap<usize, usize> = HashMap::new();
    for (line, rec) in &tasks_rows {
        if rec.len() != 3 {
            return Err(parse_err(
                TASKS,
                *line,
                "expected task_index,class_a,class_b",
            ));
        }
        let spec = TaskSpec {
            task_index: field(TASKS, *line, &rec[0], "task index")?,
            class_a: field(TASKS, *line, &rec[1], "class")?,
            class_b: field(TASKS, *line, &rec[2], "class")?,
        };
        if spec.task_index != tasks.len() + 1 {
            return Err(parse_err(
                TASKS,
                *line,
                format!("expected task index {}", tasks.len() + 1),
            ));
        }
        for c in [spec.class_a, spec.class_b] {
            if let Some(first) = class_line.insert(c, *line) {
                return Err(parse_err(
                    TASKS,
                    *line,
                    format!("class {c} already used on line {first}"),
                ));
            }
        }
        if spec.class_a == spec.class_b {
            return Err(parse_err(TASKS, *line, "task needs two distinct classes"));
        }
        tasks.push(spec);
    }
    if tasks.len() != manifest_usize(&manifest, "num_tasks")? {
        return Err(Error::Structural(format!(
            "manifest task count disagrees with {TASKS}"
        )));
    }

    let mut labels = vec![usize::MAX; n];
    for (line, rec) in csv_rows(LABELS, &files[LABELS], true)? {
        if rec.len() != 2 {
            return Err(parse_err(LABELS, line, "expected id,label"));
        }
        let id: usize = field(LABELS, line, &rec[0], "vertex id")?;
        let label: usize = field(LABELS, line, &rec[1], "label")?;
        if id >= n {
            return Err(parse_err(
                LABELS,
                line,
                format!("vertex id {id} out of range 0..{n}"),
            ));
        }
        if labels[id] != usize::MAX {
            return Err(parse_err(
                LABELS,
                line,
                format!("vertex {id} labelled twice"),
            ));
        }
        if !class_line.contains_key(&label) {
            return Err(parse_err(
                LABELS,
                line,
                format!("class {label} belongs to no task"),
            ));
        }
        labels[id] = label;
    }
    if let Some(v) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(parse_err(LABELS, 0, format!("vertex {v} has no label")));
    }
    let bundle = GraphBundle {
        edges,
        features,
        labels,
        tasks,
    };
    bundle.batches()?;
    Ok(bundle)
}

/// Flat experiment description: data source plus every run knob.
///
/// The same document is echoed into each run directory as `config.json`, so
/// a past run can be replayed by pointing `run` at its echo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bundle: Option<PathBuf>,
    pub csbm_batch_plan: Option<Vec<(usize, usize)>>,
    pub csbm_mu1: Vec<f64>,
    pub csbm_mu2: Vec<f64>,
    pub csbm_sigma: f64,
    pub csbm_p_in: f64,
    pub csbm_p_out: f64,
    pub output: Option<PathBuf>,
    pub trials: usize,

    pub kind: TrainerKind,
    pub mode: EvalMode,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub memory_budget: usize,
    pub memory_strategy: MemoryStrategy,
    pub mmd_subsample: usize,
    pub kernel_alphas: Vec<f64>,
    pub norm_mode: NormMode,
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub min_improvement: f64,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub split_train: f64,
    pub split_valid: f64,
    pub split_test: f64,
    pub bounds: bool,
    pub q: f64,
    pub reference_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_run_config(&RunConfig::default())
    }
}

impl ExperimentConfig {
    pub fn from_run_config(rc: &RunConfig) -> Self {
        Self {
            bundle: None,
            csbm_batch_plan: None,
            csbm_mu1: vec![1.0],
            csbm_mu2: vec![-1.0],
            csbm_sigma: 1.0,
            csbm_p_in: 0.1,
            csbm_p_out: 0.05,
            output: None,
            trials: 1,
            kind: rc.kind,
            mode: rc.mode,
            seed: rc.seed,
            alpha: rc.ssrm.alpha,
            beta: rc.ssrm.beta,
            memory_budget: rc.ssrm.memory_budget,
            memory_strategy: rc.ssrm.memory_strategy,
            mmd_subsample: rc.ssrm.mmd_subsample,
            kernel_alphas: rc.ssrm.kernel.alphas.clone(),
            norm_mode: rc.ssrm.kernel.norm_mode,
            epochs: rc.ssrm.epochs,
            lr: rc.ssrm.lr,
            patience: rc.ssrm.patience,
            min_improvement: rc.ssrm.min_improvement,
            hidden: rc.model.hidden,
            layers: rc.model.layers,
            activation: rc.model.activation,
            split_train: rc.split.train,
            split_valid: rc.split.valid,
            split_test: rc.split.test,
            bounds: rc.bounds,
            q: rc.q,
            reference_epochs: rc.reference_epochs,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            kind: self.kind,
            mode: self.mode,
            ssrm: SsrmConfig {
                alpha: self.alpha,
                beta: self.beta,
                memory_budget: self.memory_budget,
                memory_strategy: self.memory_strategy,
                mmd_subsample: self.mmd_subsample,
                kernel: KernelConfig {
                    alphas: self.kernel_alphas.clone(),
                    norm_mode: self.norm_mode,
                },
                epochs: self.epochs,
                lr: self.lr,
                patience: self.patience,
                min_improvement: self.min_improvement,
            },
            model: ModelConfig {
                hidden: self.hidden,
                layers: self.layers,
                activation: self.activation,
            },
            seed: self.seed,
            split: SplitRatios {
                train: self.split_train,
                valid: self.split_valid,
                test: self.split_test,
            },
            bounds: self.bounds,
            q: self.q,
            reference_epochs: self.reference_epochs,
        }
    }

    pub fn csbm_params(&self) -> Option<CsbmParams> {
        self.csbm_batch_plan.as_ref().map(|plan| CsbmParams {
            dim: self.csbm_mu1.len(),
            mu1: self.csbm_mu1.clone(),
            mu2: self.csbm_mu2.clone(),
            sigma: self.csbm_sigma,
            p_in: self.csbm_p_in,
            p_out: self.csbm_p_out,
            batch_plan: plan.clone(),
            allow_heterophily: false,
        })
    }

    /// Checks the run knobs and that exactly one data source is given and exists.
    pub fn validate(&self) -> Result<()> {
        match (&self.bundle, &self.csbm_batch_plan) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Config(
                    "give exactly one data source: 'bundle' or 'csbm_batch_plan'".into(),
                ))
            }
            (Some(b), None) if !b.join(MANIFEST).is_file() => {
                return Err(Error::Config(format!(
                    "bundle {} has no manifest",
                    b.display()
                )))
            }
            (None, Some(_)) => self.csbm_params().expect("plan present").validate()?,
            _ => {}
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.run_config().validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub seed: u64,
    pub config_sha256: String,
    pub status: String,
    pub aborted_task: Option<usize>,
    pub reason: Option<String>,
    pub files: Vec<String>,
}

/// Everything a run directory contains, as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub matrix: PerformanceMatrix,
    pub metrics: Option<MetricsReport>,
    pub bounds: Option<BoundDiagnostics>,
    pub loss_log: Vec<EpochRecord>,
    pub manifest: RunManifest,
}

/// Matrix CSV: row `i` holds `r_{i,1..i}` with six decimals.
pub fn matrix_to_csv(m: &PerformanceMatrix) -> String {
    let mut s = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.6}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn read_matrix_csv(path: &Path) -> Result<PerformanceMatrix> {
    let name = path.display().to_string();
    let text = String::from_utf8(read(path)?).map_err(|e| parse_err(&name, 0, e.to_string()))?;
    let mut m = PerformanceMatrix::new();
    for (k, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let row = raw
            .split(',')
            .map(|s| field::<f64>(&name, k + 1, s.trim(), "accuracy"))
            .collect::<Result<Vec<f64>>>()?;
        m.push_row(row)
            .map_err(|e| parse_err(&name, k + 1, e.to_string()))?;
    }
    Ok(m)
}

/// Samples as CSV rows of numbers, no header.
pub fn read_sample_csv(path: &Path) -> Result<Matrix> {
    let name = path.display().to_string();
    let rows = csv_rows(&name, &read(path)?, false)?;
    let parsed = rows
        .iter()
        .map(|(line, rec)| {
            rec.iter()
                .map(|s| field::<f64>(&name, *line, s, "number"))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&parsed)
}

pub fn metrics_to_json(m: &MetricsReport) -> Value {
    json!({
        "num_tasks": m.aps.len(),
        "aps": m.aps,
        "afs": m.afs,
        "fap": m.fap,
        "faf": m.faf.map_or(json!("N.A."), |f| json!(f)),
    })
}

pub fn metrics_from_json(v: &Value) -> Result<MetricsReport> {
    let nums = |key: &str| -> Result<Vec<f64>> {
        v.get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Config(format!("metrics document lacks '{key}'")))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| Error::Config(format!("non-numeric entry in '{key}'")))
            })
            .collect()
    };
    Ok(MetricsReport {
        aps: nums("aps")?,
        afs: nums("afs")?,
        fap: v
            .get("fap")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Config("metrics document lacks 'fap'".into()))?,
        faf: v.get("faf").and_then(Value::as_f64),
    })
}

const LOSS_HEADER: &str =
    "task,epoch,task_loss,replay_loss,reg,drift,crosstask,total,epoch_seconds,reg_seconds";

fn loss_log_csv(result: &RunResult) -> String {
    let mut s = format!("{LOSS_HEADER}\n");
    for r in result.reports.iter().flat_map(|t| &t.records) {
        writeln!(
            s,
            "{},{},{}",
            r.task,
            r.epoch,
            join_floats(&[
                r.task_loss,
                r.replay_loss,
                r.reg,
                r.drift,
                r.crosstask,
                r.total,
                r.epoch_seconds,
                r.reg_seconds
            ])
        )
        .expect("write to string");
    }
    s
}

/// Writes all artifacts of `result` into `dir`. The stored metrics are
/// computed from the six-decimal matrix so that they can be recomputed from
/// `matrix.csv` alone.
pub fn write_run_artifacts(
    result: &RunResult,
    echo: &ExperimentConfig,
    dir: &Path,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = echo.to_json()?;
    write(&dir.join("config.json"), &config)?;
    let matrix = matrix_to_csv(&result.matrix);
    write(&dir.join("matrix.csv"), &matrix)?;
    let mut files = vec!["config.json".to_string(), "matrix.csv".to_string()];

    if !result.matrix.is_empty() {
        let rounded = read_matrix_csv(&dir.join("matrix.csv"))?;
        let mut metrics = compute_metrics(&rounded)?;
        if result.metrics.as_ref().is_some_and(|m| m.faf.is_none()) {
            metrics.faf = None;
        }
        write(
            &dir.join("metrics.json"),
            &(serde_json::to_string_pretty(&metrics_to_json(&metrics))? + "\n"),
        )?;
        files.push("metrics.json".into());
    }
    if let Some(b) = &result.bounds {
        let mut doc = serde_json::to_value(b)?;
        doc["holds"] = json!(b.holds());
        write(
            &dir.join("bounds.json"),
            &(serde_json::to_string_pretty(&doc)? + "\n"),
        )?;
        files.push("bounds.json".into());
    }
    write(&dir.join("loss_log.csv"), &loss_log_csv(result))?;
    files.push("loss_log.csv".into());

    let (status, aborted_task, reason) = match &result.status {
        RunStatus::Complete => ("complete", None, None),
        RunStatus::Aborted { task, reason } => ("aborted", Some(*task), Some(reason.clone())),
    };
    let manifest = RunManifest {
        format: RUN_FORMAT.to_string(),
        seed: echo.seed,
        config_sha256: sha256_hex(config.as_bytes()),
        status: status.to_string(),
        aborted_task,
        reason,
        files,
    };
    write(
        &dir.join(MANIFEST),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(manifest)
}

/// Reads a run directory written by [`write_run_artifacts`].
pub fn read_run_artifacts(dir: &Path) -> Result<RunArtifacts> {
    let manifest: RunManifest = serde_json::from_slice(&read(&dir.join(MANIFEST))?)?;
    let config_bytes = read(&dir.join("config.json"))?;
    if sha256_hex(&config_bytes) != manifest.config_sha256 {
        return Err(Error::Checksum("config.json".into()));
    }
    let config: ExperimentConfig = serde_json::from_slice(&config_bytes)?;
    let matrix = read_matrix_csv(&dir.join("matrix.csv"))?;
    let has = |f: &str| manifest.files.iter().any(|x| x == f);
    let metrics = if has("metrics.json") {
        let v: Value = serde_json::from_slice(&read(&dir.join("metrics.json"))?)?;
        Some(metrics_from_json(&v)?)
    } else {
        None
    };
    let bounds = if has("bounds.json") {
        Some(serde_json::from_slice(&read(&dir.join("bounds.json"))?)?)
    } else {
        None
    };
    let log_name = "loss_log.csv";
    let mut loss_log = Vec::new();
    for (line, rec) in csv_rows(log_name, &read(&dir.join(log_name))?, true)? {
        if rec.len() != 10 {
            return Err(parse_err(log_name, line, "expected 10 columns"));
        }
        let f = |k: usize| field::<f64>(log_name, line, &rec[k], "number");
        loss_log.push(EpochRecord {
            task: field(log_name, line, &rec[0], "task")?,
            epoch: field(log_name, line, &rec[1], "epoch")?,
            task_loss: f(2)?,
            replay_loss: f(3)?,
            reg: f(4)?,
            drift: f(5)?,
            crosstask: f(6)?,
            total: f(7)?,
            epoch_seconds: f(8)?,
            reg_seconds: f(9)?,
        });
    }
    Ok(RunArtifacts {
        config,
        matrix,
        metrics,
        bounds,
        loss_log,
        manifest,
    })
}
