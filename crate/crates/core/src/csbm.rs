//! Contextual stochastic block model with a per-batch community schedule.
//!
//! Two communities with Gaussian features around `mu1` / `mu2`. Batches arrive
//! in order; every candidate pair with at least one endpoint in the newest batch
//! is linked independently with `p_in` (same community) or `p_out`.
//! [`verify_prop1`] measures how the expected neighbourhood mean of old
//! community-1 vertices moves once the second batch attaches.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{accumulate_snapshot, GraphSnapshot, VertexBatch, VertexId};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsbmParams {
    pub dim: usize,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sigma: f64,
    pub p_in: f64,
    pub p_out: f64,
    /// `(community 1 count, community 2 count)` per batch.
    pub batch_plan: Vec<(usize, usize)>,
    /// Permit `p_out > p_in`.
    #[serde(default)]
    pub allow_heterophily: bool,
}

impl CsbmParams {
    /// Scalar features with means `+gap/2` and `-gap/2`, unit noise.
    pub fn scalar(gap: f64, p_in: f64, p_out: f64, batch_plan: Vec<(usize, usize)>) -> Self {
        Self {
            dim: 1,
            mu1: vec![gap / 2.0],
            mu2: vec![-gap / 2.0],
            sigma: 1.0,
            p_in,
            p_out,
            batch_plan,
            allow_heterophily: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        for mu in [&self.mu1, &self.mu2] {
            if mu.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: mu.len(),
                });
            }
        }
        if self.mu1 == self.mu2 {
            return Err(Error::Config("community means must differ".into()));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0,1]")));
            }
        }
        if !self.allow_heterophily && self.p_out > self.p_in {
            return Err(Error::Config(format!(
                "p_out={} exceeds p_in={} (set allow_heterophily to permit)",
                self.p_out, self.p_in
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma={} invalid", self.sigma)));
        }
        if self.batch_plan.is_empty() {
            return Err(Error::Config("batch plan is empty".into()));
        }
        if self.batch_plan.iter().any(|&(a, b)| a + b == 0) {
            return Err(Error::Config(
                "every batch needs at least one vertex".into(),
            ));
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.batch_plan.iter().map(|&(a, b)| a + b).sum()
    }
}

/// A generated task sequence plus its generation log.
#[derive(Clone, Debug, PartialEq)]
pub struct CsbmSequence {
    /// Labels are community ids: 0 for community 1, 1 for community 2.
    pub batches: Vec<VertexBatch>,
    /// One row per vertex, in id order.
    pub features: Matrix,
    /// Edges sampled when batch `t` arrived, `(u, v)` with `u < v`.
    pub batch_edges: Vec<Vec<(VertexId, VertexId)>>,
}

impl CsbmSequence {
    /// Accumulated snapshots, one per batch.
    pub fn snapshots(&self) -> Result<Vec<GraphSnapshot>> {
        let mut out: Vec<GraphSnapshot> = Vec::with_capacity(self.batches.len());
        let mut current = GraphSnapshot::empty(self.features.cols());
        for (batch, edges) in self.batches.iter().zip(&self.batch_edges) {
            let rows = self.features.select_rows(&batch.vertices);
            current = accumulate_snapshot(&current, batch, edges, &rows)?;
            out.push(current.clone());
        }
        Ok(out)
    }

    /// Number of edges of batch `t` with both endpoints inside that batch.
    pub fn intra_batch_edges(&self, t: usize) -> usize {
        let first = self.batches[t].vertices[0];
        self.batch_edges[t]
            .iter()
            .filter(|&&(u, _)| u >= first)
            .count()
    }

    pub fn all_edges(&self) -> Vec<(VertexId, VertexId)> {
        self.batch_edges.iter().flatten().copied().collect()
    }
}

/// Samples a CSBM task sequence.
///
/// Ids are assigned in arrival order; inside a batch community-1 vertices come
/// first. Batches are returned with every vertex tagged train.
pub fn generate_csbm(params: &CsbmParams, seed: u64) -> Result<CsbmSequence> {
    params.validate()?;
    let n = params.num_vertices();
    let mut feature_rng = rng_from_seed(derive_seed(seed, 0));
    let mut edge_rng = rng_from_seed(derive_seed(seed, 1));
    let noise = Normal::new(0.0, params.sigma).map_err(|e| Error::Config(format!("sigma: {e}")))?;

    let mut community = Vec::with_capacity(n);
    let mut features = Matrix::zeros(n, params.dim);
    let mut batches = Vec::with_capacity(params.batch_plan.len());
    let mut batch_edges = Vec::with_capacity(params.batch_plan.len());

    for (t, &(c1, c2)) in params.batch_plan.iter().enumerate() {
        let start = community.len();
        community.extend(std::iter::repeat_n(0usize, c1));
        community.extend(std::iter::repeat_n(1usize, c2));
        let end = community.len();
        for v in start..end {
            let mu = if community[v] == 0 {
                &params.mu1
            } else {
                &params.mu2
            };
            for (x, m) in features.row_mut(v).iter_mut().zip(mu) {
                *x = m + noise.sample(&mut feature_rng);
            }
        }
        let mut edges = Vec::new();
        for v in start..end {
            for u in 0..v {
                let p = if community[u] == community[v] {
                    params.p_in
                } else {
                    params.p_out
                };
                if edge_rng.gen::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        edges.sort_unstable();
        let ids: Vec<VertexId> = (start..end).collect();
        let labels = community[start..end].to_vec();
        batches.push(VertexBatch::new(t + 1, ids, labels, 2)?);
        batch_edges.push(edges);
    }
    Ok(CsbmSequence {
        batches,
        features,
        batch_edges,
    })
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Expected 1-hop mean aggregation of a community-1 root that can link to
/// `c1` community-1 and `c2` community-2 vertices:
/// `(c1·p_in·μ1 + c2·p_out·μ2) / (c1·p_in + c2·p_out)`.
///
/// Counts are reduced by their gcd first, so equal community ratios give
/// bitwise-equal results.
pub fn expected_mean_agg(
    c1: usize,
    c2: usize,
    p_in: f64,
    p_out: f64,
    mu1: &[f64],
    mu2: &[f64],
) -> Result<Vec<f64>> {
    if mu1.len() != mu2.len() {
        return Err(Error::DimensionMismatch {
            expected: mu1.len(),
            got: mu2.len(),
        });
    }
    let g = gcd(c1, c2).max(1);
    let a = (c1 / g) as f64 * p_in;
    let b = (c2 / g) as f64 * p_out;
    let denom = a + b;
    if denom <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "c1·p_in + c2·p_out = 0 (c1={c1}, c2={c2}, p_in={p_in}, p_out={p_out})"
        )));
    }
    Ok(mu1
        .iter()
        .zip(mu2)
        .map(|(m1, m2)| (a * m1 + b * m2) / denom)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub counts_task1: (usize, usize),
    pub counts_task2: (usize, usize),
    /// `C1(V1)/C2(V1) == C1(V2)/C2(V2)`, compared exactly on integers.
    pub equal_ratios: bool,
    /// Closed form on whole-batch counts.
    pub analytic_expectation_task1: Vec<f64>,
    pub analytic_expectation_task2: Vec<f64>,
    /// Closed form on the root's candidate neighbours (the root itself excluded).
    pub analytic_candidate_task1: Vec<f64>,
    pub analytic_candidate_task2: Vec<f64>,
    pub empirical_mean_task1: Vec<f64>,
    pub empirical_mean_task2: Vec<f64>,
    pub standard_error_task1: Vec<f64>,
    pub standard_error_task2: Vec<f64>,
    /// Standard error of the paired per-trial difference.
    pub standard_error_diff: Vec<f64>,
    pub trials: usize,
    /// Trials with at least one non-isolated root in both snapshots.
    pub trials_used: usize,
    pub verdict: bool,
}

impl Prop1Report {
    /// Largest `|empirical - analytic| / SE` over coordinates, per task.
    pub fn agreement_z(&self, analytic1: &[f64], analytic2: &[f64]) -> (f64, f64) {
        let z = |emp: &[f64], ana: &[f64], se: &[f64]| {
            emp.iter()
                .zip(ana)
                .zip(se)
                .map(|((e, a), s)| (e - a).abs() / s)
                .fold(0.0, f64::max)
        };
        (
            z(
                &self.empirical_mean_task1,
                analytic1,
                &self.standard_error_task1,
            ),
            z(
                &self.empirical_mean_task2,
                analytic2,
                &self.standard_error_task2,
            ),
        )
    }

    /// Agreement against the candidate-neighbour closed form.
    pub fn candidate_z(&self) -> (f64, f64) {
        self.agreement_z(
            &self.analytic_candidate_task1,
            &self.analytic_candidate_task2,
        )
    }

    /// Flat `key=value` text, one pair per line; vectors are comma separated.
    pub fn to_kv_text(&self) -> String {
        fn v(xs: &[f64]) -> String {
            xs.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        }
        let (z1, z2) = self.candidate_z();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "counts_task1={},{}",
            self.counts_task1.0, self.counts_task1.1
        );
        let _ = writeln!(
            s,
            "counts_task2={},{}",
            self.counts_task2.0, self.counts_task2.1
        );
        let _ = writeln!(s, "equal_ratios={}", self.equal_ratios);
        let _ = writeln!(
            s,
            "analytic_expectation_task1={}",
            v(&self.analytic_expectation_task1)
        );
        let _ = writeln!(
            s,
            "analytic_expectation_task2={}",
            v(&self.analytic_expectation_task2)
        );
        let _ = writeln!(
            s,
            "analytic_candidate_task1={}",
            v(&self.analytic_candidate_task1)
        );
        let _ = writeln!(
            s,
            "analytic_candidate_task2={}",
            v(&self.analytic_candidate_task2)
        );
        let _ = writeln!(s, "empirical_mean_task1={}", v(&self.empirical_mean_task1));
        let _ = writeln!(s, "empirical_mean_task2={}", v(&self.empirical_mean_task2));
        let _ = writeln!(s, "standard_error_task1={}", v(&self.standard_error_task1));
        let _ = writeln!(s, "standard_error_task2={}", v(&self.standard_error_task2));
        let _ = writeln!(s, "standard_error_diff={}", v(&self.standard_error_diff));
        let _ = writeln!(s, "z_task1={z1}");
        let _ = writeln!(s, "z_task2={z2}");
        let _ = writeln!(s, "trials={}", self.trials);
        let _ = writeln!(s, "trials_used={}", self.trials_used);
        let _ = writeln!(s, "verdict={}", self.verdict);
        s
    }
}

/// Per-trial mean of the 1-hop mean aggregation over community-1 roots of
/// batch 1, under snapshot 1 and snapshot 2. `None` when no root has a neighbour.
fn prop1_trial(params: &CsbmParams, seed: u64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let seq = generate_csbm(params, seed)?;
    let n = params.num_vertices();
    let n1 = seq.batches[0].len();
    let roots = params.batch_plan[0].0;
    let dim = params.dim;
    // Per vertex: neighbour feature sums and degrees, split by whether the
    // neighbour arrived with batch 1.
    let mut sum_old = vec![0.0; roots * dim];
    let mut sum_new = vec![0.0; roots * dim];
    let mut deg_old = vec![0usize; roots];
    let mut deg_new = vec![0usize; roots];
    let mut touch = |root: usize, other: usize, old: bool| {
        let (sum, deg) = if old {
            (&mut sum_old, &mut deg_old)
        } else {
            (&mut sum_new, &mut deg_new)
        };
        deg[root] += 1;
        for (acc, x) in sum[root * dim..(root + 1) * dim]
            .iter_mut()
            .zip(seq.features.row(other))
        {
            *acc += x;
        }
    };
    for &(u, v) in seq.batch_edges.iter().flatten() {
        debug_assert!(u < v && v < n);
        if u < roots {
            touch(u, v, v < n1);
        }
        if v < roots {
            touch(v, u, true);
        }
    }
    let mut agg1 = vec![0.0; dim];
    let mut agg2 = vec![0.0; dim];
    let (mut k1, mut k2) = (0usize, 0usize);
    for r in 0..roots {
        let d1 = deg_old[r];
        let d2 = d1 + deg_new[r];
        if d1 > 0 {
            k1 += 1;
            for c in 0..dim {
                agg1[c] += sum_old[r * dim + c] / d1 as f64;
            }
        }
        if d2 > 0 {
            k2 += 1;
            for c in 0..dim {
                agg2[c] += (sum_old[r * dim + c] + sum_new[r * dim + c]) / d2 as f64;
            }
        }
    }
    if k1 == 0 || k2 == 0 {
        return Ok(None);
    }
    agg1.iter_mut().for_each(|x| *x /= k1 as f64);
    agg2.iter_mut().for_each(|x| *x /= k2 as f64);
    Ok(Some((agg1, agg2)))
}

fn mean_and_se(samples: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let se = var
        .iter()
        .map(|v| (v / (n - 1.0)).sqrt() / n.sqrt())
        .collect();
    (mean, se)
}

/// Monte-Carlo check of the imbalanced-observation effect on a two-batch plan.
///
/// Roots are the community-1 vertices of batch 1; isolated roots are dropped
/// from each trial's mean. Trials run in parallel on derived seeds and are
/// reduced in trial order.
pub fn verify_prop1(params: &CsbmParams, trials: usize, seed: u64) -> Result<Prop1Report> {
    params.validate()?;
    if params.batch_plan.len() != 2 {
        return Err(Error::Precondition(format!(
            "verify_prop1 needs exactly two batches, got {}",
            params.batch_plan.len()
        )));
    }
    if trials < 1000 {
        return Err(Error::Precondition(format!(
            "verify_prop1 needs at least 1000 trials, got {trials}"
        )));
    }
    let (a1, a2) = params.batch_plan[0];
    let (b1, b2) = params.batch_plan[1];
    if a1 == 0 {
        return Err(Error::Precondition(
            "batch 1 has no community-1 vertices".into(),
        ));
    }
    let (t1, t2) = (a1 + b1, a2 + b2);
    let formula =
        |c1, c2| expected_mean_agg(c1, c2, params.p_in, params.p_out, &params.mu1, &params.mu2);
    let analytic1 = formula(a1, a2)?;
    let analytic2 = formula(t1, t2)?;
    let candidate1 = formula(a1 - 1, a2)?;
    let candidate2 = formula(t1 - 1, t2)?;

    let outcomes: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..trials)
        .into_par_iter()
        .map(|i| prop1_trial(params, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    let used: Vec<(Vec<f64>, Vec<f64>)> = outcomes.into_iter().flatten().collect();
    if used.len() < 2 {
        return Err(Error::DegenerateInput(
            "fewer than two trials produced a non-isolated root".into(),
        ));
    }
    let dim = params.dim;
    let s1: Vec<Vec<f64>> = used.iter().map(|(a, _)| a.clone()).collect();
    let s2: Vec<Vec<f64>> = used.iter().map(|(_, b)| b.clone()).collect();
    let sd: Vec<Vec<f64>> = used
        .iter()
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let (m1, se1) = mean_and_se(&s1, dim);
    let (m2, se2) = mean_and_se(&s2, dim);
    let (md, sed) = mean_and_se(&sd, dim);

    let analytic_differs = analytic1 != analytic2;
    let empirical_differs = md.iter().zip(&sed).any(|(d, s)| d.abs() > 3.0 * s);
    Ok(Prop1Report {
        counts_task1: (a1, a2),
        counts_task2: (b1, b2),
        equal_ratios: a1 * b2 == b1 * a2,
        analytic_expectation_task1: analytic1,
        analytic_expectation_task2: analytic2,
        analytic_candidate_task1: candidate1,
        analytic_candidate_task2: candidate2,
        empirical_mean_task1: m1,
        empirical_mean_task2: m2,
        standard_error_task1: se1,
        standard_error_task2: se2,
        standard_error_diff: sed,
        trials,
        trials_used: used.len(),
        verdict: analytic_differs && empirical_differs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_give_two_cliques() {
        let p = CsbmParams::scalar(2.0, 1.0, 0.0, vec![(5, 5)]);
        let seq = generate_csbm(&p, 1).unwrap();
        let snap = &seq.snapshots().unwrap()[0];
        assert_eq!(snap.num_edges(), 2 * 10);
        for v in 0..10 {
            let ns = snap.neighbor_ids(v).unwrap();
            assert_eq!(ns.len(), 4);
            assert!(ns.iter().all(|&u| (u < 5) == (v < 5)));
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let p = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(80, 20), (20, 80)]);
        let a = generate_csbm(&p, 42).unwrap();
        let b = generate_csbm(&p, 42).unwrap();
        assert_eq!(a, b);
        for (batch, &(c1, c2)) in a.batches.iter().zip(&p.batch_plan) {
            assert_eq!(batch.labels.iter().filter(|&&l| l == 0).count(), c1);
            assert_eq!(batch.labels.iter().filter(|&&l| l == 1).count(), c2);
        }
        let c = generate_csbm(&p, 43).unwrap();
        assert_ne!(a.batch_edges, c.batch_edges);
    }

    #[test]
    fn only_newest_batch_gets_edges() {
        let p = CsbmParams::scalar(2.0, 0.3, 0.1, vec![(10, 10), (10, 10), (5, 5)]);
        let seq = generate_csbm(&p, 5).unwrap();
        for (t, edges) in seq.batch_edges.iter().enumerate() {
            let first = seq.batches[t].vertices[0];
            assert!(edges.iter().all(|&(_, v)| v >= first));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = CsbmParams::scalar(2.0, 0.1, 0.2, vec![(1, 1)]);
        assert!(p.validate().is_err());
        p.allow_heterophily = true;
        assert!(p.validate().is_ok());
        let same = CsbmParams::scalar(0.0, 0.1, 0.05, vec![(1, 1)]);
        assert!(same.validate().is_err());
        let empty = CsbmParams::scalar(1.0, 0.1, 0.05, vec![]);
        assert!(empty.validate().is_err());
    }

    #[test]
    fn formula_edge_cases() {
        let e = expected_mean_agg(7, 3, 0.4, 0.0, &[1.5, -2.0], &[9.0, 9.0]).unwrap();
        assert_eq!(e, vec![1.5, -2.0]);
        let a = expected_mean_agg(80, 20, 0.1, 0.05, &[1.0], &[-1.0]).unwrap();
        let b = expected_mean_agg(160, 40, 0.1, 0.05, &[1.0], &[-1.0]).unwrap();
        assert_eq!(a, b);
        assert!((a[0] - 7.0 / 9.0).abs() < 1e-15);
        assert!(matches!(
            expected_mean_agg(0, 5, 0.1, 0.0, &[1.0], &[0.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn verify_prop1_preconditions() {
        let three = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(5, 5), (5, 5), (5, 5)]);
        assert!(verify_prop1(&three, 1000, 0).is_err());
        let two = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(5, 5), (5, 5)]);
        assert!(verify_prop1(&two, 10, 0).is_err());
        let no_c1 = CsbmParams::scalar(2.0, 0.1, 0.05, vec![(0, 5), (5, 5)]);
        assert!(matches!(
            verify_prop1(&no_c1, 1000, 0),
            Err(Error::Precondition(_))
        ));
    }
}
