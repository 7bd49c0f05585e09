//! Command-line front end. [`dispatch`] parses argv, runs one subcommand and
//! returns the process exit status: 0 on success, 1 when validation or a
//! stage fails, 2 on usage errors. Failures print one line to stderr of the
//! form `error kind=<kind> msg=<message>`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::csbm::{generate_csbm, verify_prop1, CsbmParams};
use crate::error::{Error, Result};
use crate::io::{
    load_graph_bundle, read_matrix_csv, read_sample_csv, write_graph_bundle, write_run_artifacts,
    ExperimentConfig, GraphBundle, RunManifest,
};
use crate::metrics::compute_metrics;
use crate::mmd::{mmd2_hat, KernelConfig, NormMode};
use crate::nn::{
    cross_entropy_with_grad, grad_check, head_forward, Activation, GnnParams, GradCheckReport,
    Linear, Propagation,
};
use crate::rng::derive_seed;
use crate::train::{
    prepare_sequence, run_sequence, select_memory, ssrm_regularizer, EvalMode, MemoryStrategy,
    SequenceData, SsrmConfig, TrainerKind,
};

#[derive(Parser, Debug)]
#[command(name = "ngil", version, about = "Continual graph learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a CSBM task sequence and write it as a graph bundle.
    GenCsbm(GenArgs),
    /// Train and evaluate a task sequence described by a config file.
    Run(RunArgs),
    /// Monte Carlo check of the mean-aggregation expectation on a 2-batch CSBM.
    VerifyProp1(Prop1Args),
    /// Kernel MMD² estimate between two CSV sample files.
    Mmd(MmdArgs),
    /// Finite-difference check of the training gradients on a toy instance.
    GradCheck(GradArgs),
    /// FAP and FAF of a performance matrix CSV.
    Metrics(MetricsArgs),
}

#[derive(Clone, Debug, PartialEq)]
struct Plan(Vec<(usize, usize)>);

fn parse_plan(s: &str) -> std::result::Result<Plan, String> {
    s.split(';')
        .map(|pair| {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| format!("batch '{pair}' is not 'c1,c2'"))?;
            let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("'{x}': {e}"));
            Ok((p(a)?, p(b)?))
        })
        .collect::<std::result::Result<_, _>>()
        .map(Plan)
}

#[derive(Args, Debug)]
struct CsbmArgs {
    /// Batch plan as `c1,c2;c1,c2;...`.
    #[arg(long, value_parser = parse_plan)]
    plan: Plan,
    /// Community 1 mean (comma list; its length sets the feature dimension).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1",
        allow_hyphen_values = true
    )]
    mu1: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "-1",
        allow_hyphen_values = true
    )]
    mu2: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.05)]
    p_out: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl CsbmArgs {
    fn params(&self) -> CsbmParams {
        CsbmParams {
            dim: self.mu1.len(),
            mu1: self.mu1.clone(),
            mu2: self.mu2.clone(),
            sigma: self.sigma,
            p_in: self.p_in,
            p_out: self.p_out,
            batch_plan: self.plan.0.clone(),
            allow_heterophily: false,
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    csbm: CsbmArgs,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (flat JSON).
    config: PathBuf,
    /// Weight of the drift term.
    #[arg(long, visible_alias = "weight-drift")]
    alpha: Option<f64>,
    /// Weight of the old-versus-new term.
    #[arg(long, visible_alias = "weight-crosstask")]
    beta: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    kernel_alphas: Option<Vec<f64>>,
    #[arg(long)]
    mode: Option<EvalMode>,
    #[arg(long)]
    kind: Option<TrainerKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Number of seed-derived trials, run concurrently.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = &self.$flag { cfg.$field = v.clone(); })*
            };
        }
        set!(alpha => alpha, beta => beta, budget => memory_budget, subsample => mmd_subsample,
             kernel_alphas => kernel_alphas, mode => mode, kind => kind, seed => seed,
             epochs => epochs, lr => lr, hidden => hidden, layers => layers, trials => trials);
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
    }
}

#[derive(Args, Debug)]
struct Prop1Args {
    #[command(flatten)]
    csbm: CsbmArgs,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MmdArgs {
    x: PathBuf,
    y: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,0.1,0.01")]
    kernel_alphas: Vec<f64>,
    /// Use the squared distance in the kernel exponent.
    #[arg(long)]
    squared: bool,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[arg(long, default_value_t = 12)]
    vertices: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    matrix: PathBuf,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::GenCsbm(a) => gen_csbm(&a),
        Command::Run(a) => run(&a),
        Command::VerifyProp1(a) => prop1(&a),
        Command::Mmd(a) => mmd(&a),
        Command::GradCheck(a) => grad(&a),
        Command::Metrics(a) => metrics(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} msg={msg}", e.kind());
            1
        }
    }
}

/// Decimal with at most six places and no trailing zeros.
pub fn trim_decimal(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn gen_csbm(a: &GenArgs) -> Result<()> {
    let seq = generate_csbm(&a.csbm.params(), a.csbm.seed)?;
    let bundle = GraphBundle::from_csbm(&seq);
    write_graph_bundle(&bundle, &a.out)?;
    println!(
        "wrote {} vertices, {} edges, {} tasks to {}",
        bundle.num_vertices(),
        bundle.edges.len(),
        bundle.tasks.len(),
        a.out.display()
    );
    Ok(())
}

/// Builds the task sequence named by `cfg` for one trial seed.
pub fn experiment_data(cfg: &ExperimentConfig, seed: u64) -> Result<SequenceData> {
    let split = cfg.run_config().split;
    if let Some(path) = &cfg.bundle {
        let b = load_graph_bundle(path)?;
        prepare_sequence(
            &b.batches()?,
            &b.edges,
            &b.features,
            split,
            derive_seed(seed, 1),
        )
    } else {
        let params = cfg
            .csbm_params()
            .ok_or_else(|| Error::Config("no data source".into()))?;
        let seq = generate_csbm(&params, derive_seed(seed, 0))?;
        prepare_sequence(
            &seq.batches,
            &seq.all_edges(),
            &seq.features,
            split,
            derive_seed(seed, 1),
        )
    }
}

/// Runs every trial of `cfg`, writing artifacts under `out` (one
/// subdirectory per trial when there is more than one).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunManifest>> {
    cfg.validate()?;
    let one = |k: usize| -> Result<RunManifest> {
        let mut echo = cfg.clone();
        let dir = if cfg.trials == 1 {
            out.to_path_buf()
        } else {
            echo.seed = derive_seed(cfg.seed, k as u64);
            echo.trials = 1;
            out.join(format!("trial-{k:03}"))
        };
        echo.output = Some(dir.clone());
        let data = experiment_data(&echo, echo.seed)?;
        let result = run_sequence(&data, &echo.run_config())?;
        write_run_artifacts(&result, &echo, &dir)
    };
    (0..cfg.trials).into_par_iter().map(one).collect()
}

fn run(a: &RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    a.apply(&mut cfg);
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory: set 'output' or pass --out".into()))?;
    let manifests = run_experiment(&cfg, &out)?;
    println!(
        "kind={} mode={} alpha={} beta={} seed={}",
        cfg.kind, cfg.mode, cfg.alpha, cfg.beta, cfg.seed
    );
    let mut aborted = 0;
    for m in &manifests {
        println!("seed={} status={}", m.seed, m.status);
        aborted += usize::from(m.status != "complete");
    }
    if aborted > 0 {
        return Err(Error::Precondition(format!("{aborted} trial(s) aborted")));
    }
    Ok(())
}

fn prop1(a: &Prop1Args) -> Result<()> {
    let report = verify_prop1(&a.csbm.params(), a.trials, a.csbm.seed)?;
    let text = report.to_kv_text();
    if let Some(path) = &a.out {
        std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    print!("{text}");
    Ok(())
}

fn mmd(a: &MmdArgs) -> Result<()> {
    let kernel = KernelConfig {
        alphas: a.kernel_alphas.clone(),
        norm_mode: if a.squared {
            NormMode::SquaredL2
        } else {
            NormMode::PlainL2
        },
    };
    kernel.validate()?;
    let x = read_sample_csv(&a.x)?;
    let y = read_sample_csv(&a.y)?;
    println!("{:.6}", mmd2_hat(&x, &y, &kernel)?);
    Ok(())
}

/// Gradient checks of the classification loss through the encoder and of the
/// regularizer, on a small random CSBM instance.
pub fn toy_grad_checks(
    vertices: usize,
    hidden: usize,
    layers: usize,
    eps: f64,
    tolerance: f64,
    seed: u64,
) -> Result<(GradCheckReport, GradCheckReport)> {
    let half = vertices / 2;
    let params = CsbmParams::scalar(
        2.0,
        0.4,
        0.2,
        vec![(half, vertices - half), (half, vertices - half)],
    );
    let seq = generate_csbm(&params, seed)?;
    let snaps = seq.snapshots()?;
    let dims: Vec<usize> = std::iter::once(1)
        .chain(std::iter::repeat_n(hidden, layers))
        .collect();
    let gnn = GnnParams::init(&dims, Activation::Tanh, derive_seed(seed, 1))?;
    let head = Linear::glorot(hidden, 2, derive_seed(seed, 2));
    let targets = seq.batches[1].vertices.clone();
    let labels = seq.batches[1].labels.clone();
    let plan = Propagation::new(&snaps[1], &targets, layers)?;

    let ce = |g: &GnnParams, h: &Linear| -> Result<(f64, GnnParams, Linear)> {
        let cache = plan.forward(g, &snaps[1])?;
        let (loss, d) = cross_entropy_with_grad(&head_forward(h, &cache.output)?, &labels)?;
        let (hg, dx) = h.backward(&cache.output, &d)?;
        Ok((loss, cache.backward(&plan, g, &dx)?, hg))
    };
    let mut flat = Vec::new();
    gnn.write_flat(&mut flat);
    head.write_flat(&mut flat);
    let (_, gg, hg) = ce(&gnn, &head)?;
    let mut analytic = Vec::new();
    gg.write_flat(&mut analytic);
    hg.write_flat(&mut analytic);
    let (mut g2, mut h2) = (gnn.clone(), head.clone());
    let ce_report = grad_check(
        |q| {
            let used = g2.read_flat(q);
            h2.read_flat(&q[used..]);
            ce(&g2, &h2).map_or(f64::NAN, |r| r.0)
        },
        &flat,
        &analytic,
        eps,
        tolerance,
        200,
        seed,
    );

    let memory = select_memory(
        &seq.batches[..1],
        half.max(2),
        MemoryStrategy::Uniform,
        seed,
        &snaps[0],
        layers,
    )?;
    let cfg = SsrmConfig {
        alpha: 0.1,
        beta: 0.5,
        ..SsrmConfig::default()
    };
    // full objective: task loss through the same encoder plus the regularizer
    let full = |g: &GnnParams, h: &Linear| -> Result<(f64, GnnParams, Linear)> {
        let (loss, mut gg, hg) = ce(g, h)?;
        let r = ssrm_regularizer(g, &memory, &snaps[1], &targets, &cfg, seed)?;
        gg.add_assign(&r.grad);
        Ok((loss + r.reg, gg, hg))
    };
    let (_, gg, hg) = full(&gnn, &head)?;
    let mut analytic = Vec::new();
    gg.write_flat(&mut analytic);
    hg.write_flat(&mut analytic);
    let (mut g3, mut h3) = (gnn.clone(), head.clone());
    let ssrm_report = grad_check(
        |q| {
            let used = g3.read_flat(q);
            h3.read_flat(&q[used..]);
            full(&g3, &h3).map_or(f64::NAN, |r| r.0)
        },
        &flat,
        &analytic,
        eps,
        tolerance,
        200,
        seed,
    );
    Ok((ce_report, ssrm_report))
}

fn grad(a: &GradArgs) -> Result<()> {
    if a.vertices < 4 {
        return Err(Error::Config(
            "grad-check needs at least 4 vertices per batch".into(),
        ));
    }
    let (ce, ssrm) = toy_grad_checks(a.vertices, a.hidden, a.layers, a.eps, a.tolerance, a.seed)?;
    for (name, r) in [("cross-entropy", &ce), ("ssrm", &ssrm)] {
        println!(
            "objective={name} checked={} max_rel_error={:.3e} passed={}",
            r.checked, r.max_rel_error, r.passed
        );
    }
    if !(ce.passed && ssrm.passed) {
        return Err(Error::Precondition("gradient check failed".into()));
    }
    Ok(())
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let report = compute_metrics(&read_matrix_csv(&a.matrix)?)?;
    let faf = report.faf.map_or("N.A.".to_string(), trim_decimal);
    println!("FAP={} FAF={faf}", trim_decimal(report.fap));
    Ok(())
}
