//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIP line per
//! criterion and exits non-zero if a criterion fails that is not listed in
//! `KNOWN_RED`.
//!
//! Criterion 10 needs `NGIL_CORAFULL_BUNDLE=<bundle dir>`; it is skipped
//! otherwise.

use std::path::Path;
use std::time::{Duration, Instant};

use ngil::cli::toy_grad_checks;
use ngil::csbm::{generate_csbm, verify_prop1, CsbmParams};
use ngil::graph::SplitRatios;
use ngil::io::{
    load_graph_bundle, read_matrix_csv, read_run_artifacts, write_graph_bundle,
    write_run_artifacts, ExperimentConfig, GraphBundle,
};
use ngil::matrix::Matrix;
use ngil::metrics::{compute_metrics, PerformanceMatrix};
use ngil::mmd::{mmd2_hat, KernelConfig};
use ngil::rng::{derive_seed, rng_from_seed};
use ngil::train::{
    prepare_sequence, run_sequence, EvalMode, ModelConfig, RunConfig, RunResult, SequenceData,
    SsrmConfig, TrainerKind,
};
use rand::Rng;
use rand_distr::StandardNormal;

/// Criteria expected to fail on this implementation. Each one still runs and
/// prints its measured values.
const KNOWN_RED: &[u32] = &[6];

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome {
        pass: Some(ok),
        detail,
    }
}

fn main() {
    let criteria: Vec<(u32, &str, Duration, fn() -> Outcome)> = vec![
        (1, "mmd axioms", secs(10), mmd_axioms),
        (2, "prop1 reproduction", secs(120), prop1),
        (3, "gradient suite", secs(60), gradients),
        (4, "bitwise reduction", secs(300), reduction),
        (
            5,
            "inductive vs transductive forgetting",
            secs(1200),
            inductive_gap,
        ),
        (6, "ssrm efficacy", secs(2400), ssrm_efficacy),
        (7, "bound diagnostics", secs(1800), bound_suite),
        (8, "metrics and io oracles", secs(10), metrics_io),
        (9, "mmd overhead", secs(1800), overhead),
        (10, "real-data run (optional)", secs(7200), real_data),
    ];
    let mut unexpected = Vec::new();
    let mut tally = [0usize; 3];
    for (id, name, limit, run) in criteria {
        let started = Instant::now();
        let mut out = run();
        let took = started.elapsed();
        if out.pass == Some(true) && took > limit {
            out.pass = Some(false);
            out.detail.push_str(" runtime over limit");
        }
        let verdict = match out.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        tally[match out.pass {
            Some(true) => 0,
            Some(false) => 1,
            None => 2,
        }] += 1;
        let note = if out.pass == Some(false) && KNOWN_RED.contains(&id) {
            " [known red]"
        } else {
            ""
        };
        println!(
            "criterion {id:>2} {verdict} {name}: {} ({:.1}s of {}s){note}",
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        if out.pass == Some(false) && !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    println!(
        "acceptance: {} pass, {} fail, {} skipped",
        tally[0], tally[1], tally[2]
    );
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn mmd_axioms() -> Outcome {
    let cfg = KernelConfig::default();
    let mut rng = rng_from_seed(1);
    let mut failures = Vec::new();
    let (mut worst_sym, mut worst_neg) = (0.0f64, 0.0f64);
    for trial in 0..40 {
        let d = 1 + trial % 5;
        let x = normal_matrix(1 + trial % 17, d, &mut rng);
        let y = normal_matrix(1 + (3 * trial) % 23, d, &mut rng);
        if mmd2_hat(&x, &x, &cfg).unwrap() != 0.0 {
            failures.push(format!("self-distance trial {trial}"));
        }
        let xy = mmd2_hat(&x, &y, &cfg).unwrap();
        let yx = mmd2_hat(&y, &x, &cfg).unwrap();
        worst_sym = worst_sym.max((xy - yx).abs());
        worst_neg = worst_neg.min(xy);
    }
    if worst_sym > 1e-12 {
        failures.push(format!("symmetry {worst_sym:e}"));
    }
    if worst_neg < -1e-12 {
        failures.push(format!("negativity {worst_neg:e}"));
    }
    let x = normal_matrix(100, 3, &mut rng);
    let shifted: Vec<f64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&delta| {
            let mut y = x.clone();
            y.as_mut_slice().iter_mut().for_each(|v| *v += delta);
            mmd2_hat(&x, &y, &cfg).unwrap()
        })
        .collect();
    if shifted[0] != 0.0 || shifted.windows(2).any(|w| w[1] <= w[0]) {
        failures.push(format!("shift sequence {shifted:?}"));
    }
    let one = |v: f64| Matrix::from_vec(1, 1, vec![v]).unwrap();
    let hand = mmd2_hat(&one(0.0), &one(1.0), &cfg).unwrap();
    // 6 − 2(e^-1 + e^-0.1 + e^-0.01)
    if (hand - 1.474_466_614_1).abs() > 1e-9 {
        failures.push(format!("singleton {hand}"));
    }
    pass_if(
        failures.is_empty(),
        format!(
            "max asymmetry {worst_sym:.1e}, min value {worst_neg:.3e}, shifts {:?}, singleton {hand:.10} {}",
            shifted.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            failures.join("; ")
        ),
    )
}

fn prop1() -> Outcome {
    let shifted = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(80, 20), (20, 80)]);
    let r = verify_prop1(&shifted, 10_000, 7).unwrap();
    let (z1, z2) = r.candidate_z();
    let (raw1, raw2) = r.agreement_z(&r.analytic_expectation_task1, &r.analytic_expectation_task2);
    let control = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(50, 50), (70, 70)]);
    let c = verify_prop1(&control, 2_000, 8).unwrap();
    pass_if(
        z1 < 3.0 && z2 < 3.0 && r.verdict && !c.verdict,
        format!(
            "z=({z1:.2},{z2:.2}) raw-count z=({raw1:.2},{raw2:.2}) shift={} control shift={}",
            r.verdict, c.verdict
        ),
    )
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = true;
    for (seed, (vertices, hidden, layers)) in
        [(8, 4, 1), (10, 5, 2), (12, 3, 3)].into_iter().enumerate()
    {
        let (ce, ssrm) =
            toy_grad_checks(vertices, hidden, layers, 1e-5, 1e-4, seed as u64).unwrap();
        worst = worst.max(ce.max_rel_error).max(ssrm.max_rel_error);
        ok &= ce.passed && ssrm.passed;
    }
    pass_if(
        ok && worst < 1e-4,
        format!("max relative error {worst:.2e}"),
    )
}

/// One balanced batch, then nineteen batches dominated by community 2. Old
/// community-1 vertices keep gaining community-2 neighbours.
fn shifted_params() -> CsbmParams {
    let mut plan = vec![(200, 200)];
    plan.extend(std::iter::repeat((10, 200)).take(19));
    CsbmParams::scalar(1.0, 0.02, 0.01, plan)
}

fn sequence(params: &CsbmParams, seed: u64) -> SequenceData {
    let seq = generate_csbm(params, derive_seed(seed, 0)).unwrap();
    prepare_sequence(
        &seq.batches,
        &seq.all_edges(),
        &seq.features,
        SplitRatios::default(),
        derive_seed(seed, 1),
    )
    .unwrap()
}

fn small_config(kind: TrainerKind, mode: EvalMode, seed: u64, bounds: bool) -> RunConfig {
    RunConfig {
        kind,
        mode,
        seed,
        ssrm: SsrmConfig {
            epochs: 100,
            lr: 0.01,
            ..SsrmConfig::default()
        },
        model: ModelConfig {
            hidden: 16,
            ..ModelConfig::default()
        },
        bounds,
        ..RunConfig::default()
    }
}

fn run(data: &SequenceData, cfg: &RunConfig) -> RunResult {
    let r = run_sequence(data, cfg).unwrap();
    assert!(r.metrics.is_some(), "run aborted: {:?}", r.status);
    r
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn reduction() -> Outcome {
    let data = sequence(&shifted_params(), 0);
    let bare = run(
        &data,
        &small_config(TrainerKind::Bare, EvalMode::Inductive, 3, false),
    );
    let mut cfg = small_config(TrainerKind::BareSsrm, EvalMode::Inductive, 3, false);
    cfg.ssrm.alpha = 0.0;
    cfg.ssrm.beta = 0.0;
    let reduced = run(&data, &cfg);
    let a = bare.model.flatten();
    let b = reduced.model.flatten();
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    pass_if(
        same && bare.matrix == reduced.matrix,
        format!(
            "{} parameters over {} tasks, bitwise equal: {same}",
            a.len(),
            data.len()
        ),
    )
}

fn inductive_gap() -> Outcome {
    let params = shifted_params();
    let (mut ind, mut tra) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let data = sequence(&params, seed);
        for (mode, out) in [
            (EvalMode::Inductive, &mut ind),
            (EvalMode::Transductive, &mut tra),
        ] {
            let r = run(&data, &small_config(TrainerKind::Bare, mode, seed, false));
            out.push(r.metrics.unwrap().faf.unwrap());
        }
    }
    let (i, t) = (mean(&ind), mean(&tra));
    pass_if(
        i <= t - 0.02,
        format!(
            "mean FAF inductive {i:.4}, transductive {t:.4}, gap {:.4}",
            t - i
        ),
    )
}

fn ssrm_efficacy() -> Outcome {
    let params = shifted_params();
    let (mut fap_replay, mut fap_ssrm) = (Vec::new(), Vec::new());
    let (mut drift_bare, mut drift_ssrm) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let data = sequence(&params, seed);
        let cfg = |kind| small_config(kind, EvalMode::Inductive, seed, true);
        let bare = run(&data, &cfg(TrainerKind::Bare));
        let replay = run(&data, &cfg(TrainerKind::Replay));
        let ssrm = run(&data, &cfg(TrainerKind::ReplaySsrm));
        drift_bare.push(bare.bounds.unwrap().mmd_drift);
        drift_ssrm.push(ssrm.bounds.unwrap().mmd_drift);
        fap_replay.push(replay.metrics.unwrap().fap);
        fap_ssrm.push(ssrm.metrics.unwrap().fap);
    }
    let (fr, fs) = (mean(&fap_replay), mean(&fap_ssrm));
    let (db, ds) = (mean(&drift_bare), mean(&drift_ssrm));
    pass_if(
        fs >= fr + 0.01 && ds < db,
        format!(
            "mean FAP replay {fr:.4}, replay+ssrm {fs:.4} (gain {:+.4}); mean mmd_drift bare {db:.4}, replay+ssrm {ds:.4}",
            fs - fr
        ),
    )
}

fn bound_suite() -> Outcome {
    let params = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(80, 20), (20, 80)]);
    let mut holds = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..50 {
        let data = sequence(&params, seed);
        let r = run(
            &data,
            &small_config(TrainerKind::Bare, EvalMode::Inductive, seed, true),
        );
        let b = r.bounds.unwrap();
        worst = worst.max(b.gap);
        if b.holds() {
            holds += 1;
        } else {
            println!(
                "  bound violated: seed {seed} cfr {:.4} > bound {:.4} (margin {:+.4})",
                b.observed_cfr, b.bound, b.gap
            );
        }
    }
    pass_if(
        holds * 100 >= 95 * 50,
        format!("bound holds in {holds}/50 runs, largest cfr-bound {worst:+.4}"),
    )
}

/// Independent loop oracle for the final-row metrics.
fn oracle_fap_faf(rows: &[Vec<f64>]) -> (f64, f64) {
    let m = rows.len();
    let mut fap = 0.0;
    let mut faf = 0.0;
    for j in 0..m {
        fap += rows[m - 1][j];
        faf += rows[m - 1][j] - rows[j][j];
    }
    (fap / m as f64, faf / m as f64)
}

fn metrics_io() -> Outcome {
    let mut failures = Vec::new();
    let hand = PerformanceMatrix::from_rows(vec![vec![0.9], vec![0.8, 0.85]]).unwrap();
    let h = compute_metrics(&hand).unwrap();
    if (h.fap - 0.825).abs() > 1e-12 || (h.faf.unwrap() + 0.05).abs() > 1e-12 {
        failures.push(format!("hand example {} {:?}", h.fap, h.faf));
    }
    let mut rng = rng_from_seed(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let rows: Vec<Vec<f64>> = (1..=5)
            .map(|i| (0..i).map(|_| rng.gen()).collect())
            .collect();
        let got = compute_metrics(&PerformanceMatrix::from_rows(rows.clone()).unwrap()).unwrap();
        let (fap, faf) = oracle_fap_faf(&rows);
        worst = worst
            .max((got.fap - fap).abs())
            .max((got.faf.unwrap() - faf).abs());
    }
    if worst > 1e-12 {
        failures.push(format!("random oracle {worst:e}"));
    }

    let tmp = tempfile::tempdir().unwrap();
    let params = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(30, 10), (10, 30), (20, 20)]);
    let seq = generate_csbm(&params, 4).unwrap();
    let bundle = GraphBundle::from_csbm(&seq);
    write_graph_bundle(&bundle, &tmp.path().join("bundle")).unwrap();
    if load_graph_bundle(&tmp.path().join("bundle")).unwrap() != bundle {
        failures.push("bundle round trip".into());
    }

    let data = sequence(&params, 1);
    let mut rc = small_config(TrainerKind::ReplaySsrm, EvalMode::Inductive, 1, true);
    rc.ssrm.epochs = 20;
    let result = run(&data, &rc);
    let echo = ExperimentConfig::from_run_config(&rc);
    let first = tmp.path().join("run-a");
    write_run_artifacts(&result, &echo, &first).unwrap();
    let back = read_run_artifacts(&first).unwrap();
    let recomputed = compute_metrics(&read_matrix_csv(&first.join("matrix.csv")).unwrap()).unwrap();
    let stored = back.metrics.clone().unwrap();
    if (recomputed.fap - stored.fap).abs() > 1e-9 {
        failures.push("metrics vs matrix.csv".into());
    }
    if back.config != echo || back.bounds != result.bounds {
        failures.push("artifact fields".into());
    }
    // a second write from the read-back state must reproduce every file
    let second = tmp.path().join("run-b");
    let mut again = result.clone();
    again.matrix = back.matrix.clone();
    write_run_artifacts(&again, &back.config, &second).unwrap();
    for f in [
        "config.json",
        "matrix.csv",
        "metrics.json",
        "bounds.json",
        "loss_log.csv",
        "manifest.json",
    ] {
        if !same_file(&first.join(f), &second.join(f)) {
            failures.push(format!("artifact {f} differs"));
        }
    }
    pass_if(
        failures.is_empty(),
        format!(
            "random-matrix error {worst:.1e}; {}",
            if failures.is_empty() {
                "round trips identical".to_string()
            } else {
                failures.join("; ")
            }
        ),
    )
}

fn same_file(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

/// CoraFull-sized synthetic graph: 30k vertices in three tasks, 128-dim
/// features and a 128-wide two-layer encoder.
fn overhead() -> Outcome {
    let mut params = CsbmParams::scalar(
        2.0,
        0.0005,
        0.00025,
        vec![(7500, 2500), (2500, 7500), (7500, 2500)],
    );
    let dim = 128;
    let m = 1.0 / (dim as f64).sqrt();
    params.dim = dim;
    params.mu1 = vec![m; dim];
    params.mu2 = vec![-m; dim];
    let data = sequence(&params, 0);
    let cfg = RunConfig {
        kind: TrainerKind::ReplaySsrm,
        mode: EvalMode::Inductive,
        seed: 0,
        ssrm: SsrmConfig {
            epochs: 4,
            patience: 0,
            lr: 0.01,
            memory_budget: 200,
            mmd_subsample: 256,
            ..SsrmConfig::default()
        },
        model: ModelConfig {
            hidden: 128,
            ..ModelConfig::default()
        },
        bounds: false,
        ..RunConfig::default()
    };
    let r = run(&data, &cfg);
    let ratios: Vec<f64> = r
        .reports
        .iter()
        .flat_map(|t| &t.records)
        .filter(|e| e.reg_seconds > 0.0)
        .map(|e| e.reg_seconds / e.epoch_seconds)
        .collect();
    let per_epoch = mean(&ratios);
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    pass_if(
        !ratios.is_empty() && per_epoch < 0.15,
        format!(
            "regularizer share {:.1}% per epoch (max {:.1}%) over {} regularized epochs",
            100.0 * per_epoch,
            100.0 * worst,
            ratios.len()
        ),
    )
}

fn real_data() -> Outcome {
    let Some(dir) = std::env::var_os("NGIL_CORAFULL_BUNDLE") else {
        return Outcome {
            pass: None,
            detail: "set NGIL_CORAFULL_BUNDLE to a bundle directory to run".into(),
        };
    };
    let bundle = load_graph_bundle(Path::new(&dir)).unwrap();
    let data = prepare_sequence(
        &bundle.batches().unwrap(),
        &bundle.edges,
        &bundle.features,
        SplitRatios::default(),
        1,
    )
    .unwrap();
    let cfg = |kind| RunConfig {
        kind,
        bounds: false,
        ..small_config(kind, EvalMode::Inductive, 0, false)
    };
    let bare = run(&data, &cfg(TrainerKind::Bare)).metrics.unwrap();
    let replay = run(&data, &cfg(TrainerKind::Replay)).metrics.unwrap();
    let ssrm = run(&data, &cfg(TrainerKind::ReplaySsrm)).metrics.unwrap();
    let faf = bare.faf.unwrap();
    pass_if(
        faf <= -0.15 && ssrm.fap > replay.fap,
        format!(
            "{} tasks: bare FAF {faf:.4}; FAP replay {:.4}, replay+ssrm {:.4}",
            data.len(),
            replay.fap,
            ssrm.fap
        ),
    )
}
