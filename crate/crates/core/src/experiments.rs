//! Scripted, seeded experiment runs emitting tabular data.
//!
//! Every run is a pure function of its inputs and seed: trials map to derived
//! seeds keyed by their position, and are dispatched in parallel with
//! order-independent assembly, so reruns are bitwise identical.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{
    apply_rigid_transform, generate_gaussian_mixture, hard_instance, jl_project, DataSet,
    MixtureSpec, RigidTransform,
};
use crate::error::{Error, Result};
use crate::kmeans::{center_error, cost, diagnostics, lloyd_step, Centers};
use crate::linalg::dist;
use crate::quantum::{quantum_kmeans_step, EmulationConfig};
use crate::samplers::{
    dlt_update, minibatch_step_with_batch, minibatch_update, sample_indices, scheme_probabilities,
    Batch, DampedSpec, EmptyClusterFallback, SamplingScheme,
};
use crate::seeding::derive_seed;

/// One-step algorithms the harness can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Uniform,
    DltRowNormSquared,
    DltRowNorm,
    /// Deterministic full-batch degeneracy; reproduces the Lloyd step.
    FullBatch,
}

impl Algorithm {
    /// Stable stream identifier for seed derivation.
    fn stream_id(self) -> u64 {
        match self {
            Algorithm::Uniform => 0,
            Algorithm::DltRowNormSquared => 1,
            Algorithm::DltRowNorm => 2,
            Algorithm::FullBatch => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Uniform => "uniform",
            Algorithm::DltRowNormSquared => "dlt_row_norm_squared",
            Algorithm::DltRowNorm => "dlt_row_norm",
            Algorithm::FullBatch => "full_batch",
        }
    }

    fn scheme(self) -> Option<SamplingScheme> {
        match self {
            Algorithm::DltRowNormSquared => Some(SamplingScheme::RowNormSquared),
            Algorithm::DltRowNorm => Some(SamplingScheme::RowNorm),
            _ => None,
        }
    }

    /// Samples drawn per step at batch size `b` on `n` points.
    pub fn samples_used(self, b: usize, n: usize) -> usize {
        match self {
            Algorithm::Uniform => b,
            // two independent batches of size b
            Algorithm::DltRowNormSquared | Algorithm::DltRowNorm => 2 * b,
            Algorithm::FullBatch => n,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "uniform" => Ok(Algorithm::Uniform),
            "dlt_row_norm_squared" => Ok(Algorithm::DltRowNormSquared),
            "dlt_row_norm" => Ok(Algorithm::DltRowNorm),
            "full_batch" => Ok(Algorithm::FullBatch),
            other => Err(Error::UnknownAlgorithm(other.into())),
        }
    }
}

pub fn parse_algorithms(tags: &str) -> Result<Vec<Algorithm>> {
    tags.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(Algorithm::from_str)
        .collect()
}

/// Per-dataset context caching the weighted sampling distributions; steps run
/// without report assembly so no full-data pass happens inside a trial.
struct StepContext<'a> {
    data: &'a DataSet,
    probs_row_norm: Option<Vec<f64>>,
    probs_row_norm_squared: Option<Vec<f64>>,
}

impl<'a> StepContext<'a> {
    fn new(data: &'a DataSet, algorithms: &[Algorithm]) -> Result<Self> {
        let mut probs_row_norm = None;
        let mut probs_row_norm_squared = None;
        for alg in algorithms {
            match alg.scheme() {
                Some(SamplingScheme::RowNorm) if probs_row_norm.is_none() => {
                    probs_row_norm = Some(scheme_probabilities(data, SamplingScheme::RowNorm)?);
                }
                Some(SamplingScheme::RowNormSquared) if probs_row_norm_squared.is_none() => {
                    probs_row_norm_squared =
                        Some(scheme_probabilities(data, SamplingScheme::RowNormSquared)?);
                }
                _ => {}
            }
        }
        Ok(Self {
            data,
            probs_row_norm,
            probs_row_norm_squared,
        })
    }

    fn step(
        &self,
        centers0: &Centers,
        alg: Algorithm,
        b: usize,
        seed: u64,
    ) -> Result<(Centers, Batch)> {
        let n = self.data.n();
        match alg {
            Algorithm::Uniform => {
                let batch = sample_indices(n, b, SamplingScheme::Uniform, self.data, seed)?;
                let (c, _, _) = minibatch_update(self.data, centers0, &batch)?;
                Ok((c, batch))
            }
            Algorithm::FullBatch => {
                let batch = Batch::full(n);
                let (c, _, _) = minibatch_update(self.data, centers0, &batch)?;
                Ok((c, batch))
            }
            Algorithm::DltRowNormSquared | Algorithm::DltRowNorm => {
                let scheme = alg.scheme().expect("dlt algorithms carry a scheme");
                let probs = match scheme {
                    SamplingScheme::RowNorm => self.probs_row_norm.as_ref(),
                    SamplingScheme::RowNormSquared => self.probs_row_norm_squared.as_ref(),
                    SamplingScheme::Uniform => None,
                }
                .expect("weighted probabilities were precomputed");
                let uniform = sample_indices(
                    n,
                    b,
                    SamplingScheme::Uniform,
                    self.data,
                    derive_seed(seed, &[0]),
                )?;
                let weighted = sample_indices(n, b, scheme, self.data, derive_seed(seed, &[1]))?;
                let (c, _, _) = dlt_update(self.data, centers0, &uniform, &weighted, probs)?;
                Ok((c, weighted))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub b: usize,
    pub algorithm: String,
    pub trial: usize,
    pub max_err: f64,
    pub weighted_err: f64,
    pub cost: f64,
    pub samples_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub algorithm: String,
    pub b: usize,
    pub median_max_err: f64,
    pub q05_max_err: f64,
    pub q95_max_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub cells: Vec<SweepCell>,
    /// Least-squares slope of log(median max error) against log(b), per algorithm.
    pub slopes: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    pub fn summary(&self) -> SweepSummary {
        let mut algs: Vec<String> = Vec::new();
        for r in &self.records {
            if !algs.contains(&r.algorithm) {
                algs.push(r.algorithm.clone());
            }
        }
        let mut bs: Vec<usize> = Vec::new();
        for r in &self.records {
            if !bs.contains(&r.b) {
                bs.push(r.b);
            }
        }
        bs.sort_unstable();
        let mut cells = Vec::new();
        let mut slopes = Vec::new();
        for alg in &algs {
            let mut curve = Vec::new();
            for &b in &bs {
                let vals: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| &r.algorithm == alg && r.b == b)
                    .map(|r| r.max_err)
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let median = quantile(&vals, 0.5);
                cells.push(SweepCell {
                    algorithm: alg.clone(),
                    b,
                    median_max_err: median,
                    q05_max_err: quantile(&vals, 0.05),
                    q95_max_err: quantile(&vals, 0.95),
                });
                curve.push((b as f64, median));
            }
            slopes.push((alg.clone(), log_log_slope(&curve)));
        }
        SweepSummary { cells, slopes }
    }

    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "algorithm",
            "b",
            "trial",
            "max_err",
            "weighted_err",
            "cost",
            "samples_used",
        ])
        .map_err(csv_io)?;
        for r in &self.records {
            wtr.write_record([
                r.algorithm.clone(),
                r.b.to_string(),
                r.trial.to_string(),
                format!("{}", r.max_err),
                format!("{}", r.weighted_err),
                format!("{}", r.cost),
                r.samples_used.to_string(),
            ])
            .map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Interpolated quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

/// Least-squares slope of ln(y) on ln(x); pairs with non-positive y are skipped.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

/// One step per (batch size, algorithm, trial) from a shared initialization,
/// with errors measured against the exact Lloyd update.
pub fn batch_sweep(
    data: &DataSet,
    centers0: &Centers,
    b_grid: &[usize],
    algorithms: &[Algorithm],
    trials: usize,
    seed: u64,
) -> Result<SweepResult> {
    if b_grid.is_empty() || b_grid.contains(&0) {
        return Err(Error::InvalidParameter(
            "batch sizes must be positive".into(),
        ));
    }
    if trials == 0 || algorithms.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one trial and algorithm".into(),
        ));
    }
    log::info!(
        "batch sweep: n={}, k={}, {} batch sizes, {} algorithms, {trials} trials",
        data.n(),
        centers0.k(),
        b_grid.len(),
        algorithms.len()
    );
    let ctx = StepContext::new(data, algorithms)?;
    let (c_ref, assignment) = lloyd_step(data, centers0)?;
    let sizes = assignment.sizes().to_vec();

    let mut tasks = Vec::new();
    for &alg in algorithms {
        for &b in b_grid {
            for trial in 0..trials {
                tasks.push((alg, b, trial));
            }
        }
    }
    let records: Vec<SweepRecord> = tasks
        .par_iter()
        .map(|&(alg, b, trial)| -> Result<SweepRecord> {
            let step_seed = derive_seed(seed, &[alg.stream_id(), b as u64, trial as u64, 1]);
            let (c_hat, _) = ctx.step(centers0, alg, b, step_seed)?;
            let (max_err, weighted_err) = center_error(&c_ref, &c_hat, &sizes, data.n())?;
            let c = cost(data, &c_hat)?;
            Ok(SweepRecord {
                b,
                algorithm: alg.tag().into(),
                trial,
                max_err,
                weighted_err,
                cost: c,
                samples_used: alg.samples_used(b, data.n()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { records })
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiStepRecord {
    pub t: usize,
    pub algorithm: String,
    pub trial: usize,
    pub max_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiStepResult {
    pub records: Vec<MultiStepRecord>,
}

impl MultiStepResult {
    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["algorithm", "t", "trial", "max_err"])
            .map_err(csv_io)?;
        for r in &self.records {
            wtr.write_record([
                r.algorithm.clone(),
                r.t.to_string(),
                r.trial.to_string(),
                format!("{}", r.max_err),
            ])
            .map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Median error per (algorithm, t).
    pub fn median_curve(&self, algorithm: &str) -> Vec<(usize, f64)> {
        let mut ts: Vec<usize> = Vec::new();
        for r in &self.records {
            if r.algorithm == algorithm && !ts.contains(&r.t) {
                ts.push(r.t);
            }
        }
        ts.sort_unstable();
        ts.into_iter()
            .map(|t| {
                let vals: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.algorithm == algorithm && r.t == t)
                    .map(|r| r.max_err)
                    .collect();
                (t, quantile(&vals, 0.5))
            })
            .collect()
    }
}

/// Advances the exact Lloyd track and each algorithm's approximate track in
/// lockstep from the same initialization; the error at iteration t compares
/// the approximate centers against the exact track at t.
pub fn multistep_run(
    data: &DataSet,
    centers_init: &Centers,
    steps: usize,
    b: usize,
    algorithms: &[Algorithm],
    trials: usize,
    seed: u64,
) -> Result<MultiStepResult> {
    if steps == 0 || b == 0 || trials == 0 || algorithms.is_empty() {
        return Err(Error::InvalidParameter(
            "steps, b, trials, and algorithms must be nonempty/positive".into(),
        ));
    }
    log::info!("multistep run: {steps} steps, b={b}, {trials} trials");
    let ctx = StepContext::new(data, algorithms)?;

    let mut exact = Vec::with_capacity(steps);
    let mut current = centers_init.clone();
    for _ in 0..steps {
        let (next, _) = lloyd_step(data, &current)?;
        exact.push(next.clone());
        current = next;
    }

    let mut tasks = Vec::new();
    for &alg in algorithms {
        for trial in 0..trials {
            tasks.push((alg, trial));
        }
    }
    let per_task: Vec<Vec<MultiStepRecord>> = tasks
        .par_iter()
        .map(|&(alg, trial)| -> Result<Vec<MultiStepRecord>> {
            let mut rows = Vec::with_capacity(steps);
            let mut state = centers_init.clone();
            for t in 1..=steps {
                let step_seed =
                    derive_seed(seed, &[alg.stream_id(), b as u64, trial as u64, t as u64]);
                let (next, _) = ctx.step(&state, alg, b, step_seed)?;
                let reference = &exact[t - 1];
                let max_err = (0..reference.k())
                    .map(|j| dist(reference.center(j), next.center(j)))
                    .fold(0.0f64, f64::max);
                rows.push(MultiStepRecord {
                    t,
                    algorithm: alg.tag().into(),
                    trial,
                    max_err,
                });
                state = next;
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiStepResult {
        records: per_task.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceRecord {
    pub variant: String,
    pub algorithm: String,
    pub b: usize,
    pub trials: usize,
    pub recovered: usize,
    pub recovery_rate: f64,
    pub hits: usize,
    pub hit_rate: f64,
    /// Exact hit probability: all-clusters-hit for uniform, rare-cluster-hit
    /// for the norm-sampled variant.
    pub closed_form: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceResult {
    pub records: Vec<InvarianceRecord>,
}

impl InvarianceResult {
    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "variant",
            "algorithm",
            "b",
            "trials",
            "recovered",
            "recovery_rate",
            "hits",
            "hit_rate",
            "closed_form",
        ])
        .map_err(csv_io)?;
        for r in &self.records {
            wtr.write_record([
                r.variant.clone(),
                r.algorithm.clone(),
                r.b.to_string(),
                r.trials.to_string(),
                r.recovered.to_string(),
                format!("{}", r.recovery_rate),
                r.hits.to_string(),
                format!("{}", r.hit_rate),
                format!("{}", r.closed_form),
            ])
            .map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn record(&self, variant: &str, algorithm: &str, b: usize) -> Option<&InvarianceRecord> {
        self.records
            .iter()
            .find(|r| r.variant == variant && r.algorithm == algorithm && r.b == b)
    }
}

/// Recovery threshold used by [`invariance_demo`]; far below the hard
/// instance's center separation of at least 2.
pub const RECOVERY_THRESHOLD: f64 = 0.01;

/// Runs uniform mini-batch and the squared-norm-sampled competitor on the
/// two-cluster hard instance and on a shifted copy, recording per batch size
/// the empirical recovery and hit rates next to their closed forms.
pub fn invariance_demo(
    alpha: f64,
    n: usize,
    shift: f64,
    b_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<InvarianceResult> {
    if b_grid.is_empty() || b_grid.contains(&0) || trials == 0 {
        return Err(Error::InvalidParameter(
            "need positive batch sizes and trials".into(),
        ));
    }
    let (data0, centers0) = hard_instance(n, alpha)?;
    let t = RigidTransform::translation(vec![shift]);
    let data1 = apply_rigid_transform(&data0, &t)?;
    let centers1 = Centers::from_rows(&[
        t.apply_point(centers0.center(0)),
        t.apply_point(centers0.center(1)),
    ])?;

    let algorithms = [Algorithm::Uniform, Algorithm::DltRowNormSquared];
    let mut records = Vec::new();
    // trial seeds are shared across the two variants so shift equivariance is
    // observable with identical randomness
    for (variant, data, centers) in [
        ("original", &data0, &centers0),
        ("shifted", &data1, &centers1),
    ] {
        let ctx = StepContext::new(data, &algorithms)?;
        let (c_ref, assignment) = lloyd_step(data, centers)?;
        let labels = assignment.labels().to_vec();
        let k = centers.k();

        // cluster fractions and weighted masses for the closed forms
        let fractions: Vec<f64> = assignment
            .sizes()
            .iter()
            .map(|&s| s as f64 / data.n() as f64)
            .collect();
        let sq_norms = data.row_sq_norms();
        let total_weight: f64 = sq_norms.iter().sum();
        let cluster_weight: Vec<f64> = (0..k)
            .map(|j| {
                assignment
                    .members(j)
                    .iter()
                    .map(|&i| sq_norms[i])
                    .sum::<f64>()
            })
            .collect();
        let rare_cluster = (0..k)
            .min_by(|&a, &b| cluster_weight[a].partial_cmp(&cluster_weight[b]).unwrap())
            .expect("k >= 1");
        let rare_mass = if total_weight > 0.0 {
            cluster_weight[rare_cluster] / total_weight
        } else {
            0.0
        };

        for &alg in &algorithms {
            for &b in b_grid {
                let closed_form = match alg {
                    Algorithm::Uniform => {
                        // inclusion-exclusion for hitting both clusters (k = 2)
                        1.0 - (1.0 - fractions[0]).powi(b as i32)
                            - (1.0 - fractions[1]).powi(b as i32)
                    }
                    _ => 1.0 - (1.0 - rare_mass).powi(b as i32),
                };
                let outcomes: Vec<(bool, bool)> = (0..trials)
                    .into_par_iter()
                    .map(|trial| -> Result<(bool, bool)> {
                        let step_seed =
                            derive_seed(seed, &[alg.stream_id(), b as u64, trial as u64]);
                        let (c_hat, batch) = ctx.step(centers, alg, b, step_seed)?;
                        let hit = match alg {
                            Algorithm::Uniform => {
                                (0..k).all(|j| batch.indices.iter().any(|&i| labels[i] == j))
                            }
                            _ => batch.indices.iter().any(|&i| labels[i] == rare_cluster),
                        };
                        let recovered = (0..k)
                            .all(|j| dist(c_ref.center(j), c_hat.center(j)) <= RECOVERY_THRESHOLD);
                        Ok((hit, recovered))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let hits = outcomes.iter().filter(|o| o.0).count();
                let recovered = outcomes.iter().filter(|o| o.1).count();
                records.push(InvarianceRecord {
                    variant: variant.to_string(),
                    algorithm: alg.tag().into(),
                    b,
                    trials,
                    recovered,
                    recovery_rate: recovered as f64 / trials as f64,
                    hits,
                    hit_rate: hits as f64 / trials as f64,
                    closed_form,
                });
            }
        }
    }
    Ok(InvarianceResult { records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundCheckKind {
    ThmMain,
    CorMonotone,
    CorDamped,
    QuantumMain,
}

impl fmt::Display for BoundCheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ThmMain => "thm_main",
            Self::CorMonotone => "cor_monotone",
            Self::CorDamped => "cor_damped",
            Self::QuantumMain => "quantum_main",
        })
    }
}

impl FromStr for BoundCheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "thm_main" => Ok(Self::ThmMain),
            "cor_monotone" => Ok(Self::CorMonotone),
            "cor_damped" => Ok(Self::CorDamped),
            "quantum_main" => Ok(Self::QuantumMain),
            other => Err(Error::InvalidParameter(format!(
                "unknown bound check '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCheckReport {
    pub which: String,
    /// Prescribed batch size, where the bound prescribes one.
    pub b: Option<usize>,
    pub eps: f64,
    /// Failure budget the empirical rate is compared against.
    pub delta: f64,
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub sigma: f64,
    /// `delta + 3 sigma`.
    pub band: f64,
    pub pass: bool,
    pub threshold: f64,
    pub phi: f64,
    #[serde(rename = "k_C")]
    pub k_c: f64,
    #[serde(skip)]
    pub per_trial: Vec<f64>,
}

impl BoundCheckReport {
    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["trial", "stat", "threshold", "failed"])
            .map_err(csv_io)?;
        for (i, &s) in self.per_trial.iter().enumerate() {
            wtr.write_record([
                i.to_string(),
                format!("{s}"),
                format!("{}", self.threshold),
                (s > self.threshold).to_string(),
            ])
            .map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Verifies one of the one-step guarantees empirically: computes the
/// prescribed batch size (or accuracy schedule), runs seeded trials, and
/// compares the failure rate against `delta` with a 3-sigma binomial band.
#[allow(clippy::too_many_arguments)]
pub fn bound_check(
    data: &DataSet,
    centers0: &Centers,
    eps: f64,
    delta: f64,
    trials: usize,
    seed: u64,
    which: BoundCheckKind,
    damping: Option<&DampedSpec>,
    config: Option<&EmulationConfig>,
) -> Result<BoundCheckReport> {
    if !(eps > 0.0) || !(delta > 0.0 && delta < 1.0) || trials == 0 {
        return Err(Error::InvalidParameter(
            "need eps > 0, delta in (0, 1), and at least one trial".into(),
        ));
    }
    let diag = diagnostics(data, centers0)?;
    let (c_ref, assignment) = lloyd_step(data, centers0)?;
    let sizes = assignment.sizes().to_vec();
    let k = centers0.k() as f64;
    log::info!("bound check {which}: phi={}, k_C={}", diag.phi, diag.k_c);

    let prescribe = |inner: f64| -> usize {
        (diag.k_c * inner.max(8.0 * (k / delta).ln()))
            .ceil()
            .max(1.0) as usize
    };

    let (b, delta_target, threshold): (Option<usize>, f64, f64) = match which {
        BoundCheckKind::ThmMain => (
            Some(prescribe(4.0 * diag.phi / (eps * eps * delta))),
            delta,
            eps * eps,
        ),
        BoundCheckKind::CorMonotone => (
            Some(prescribe(4.0 / (eps * delta))),
            delta,
            (1.0 + eps) * diag.phi,
        ),
        BoundCheckKind::CorDamped => {
            // the corollary fixes the failure budget at 1/10
            let b = (diag.k_c * (40.0 / eps).max(8.0 * (20.0 * k).ln())).ceil() as usize;
            let spec = damping
                .cloned()
                .unwrap_or(DampedSpec::constant(0.5, centers0.k())?);
            let bound = ((1.0 - spec.min()) + spec.max() * (1.0 + eps).sqrt()).powi(2) * diag.phi;
            (Some(b.max(1)), 0.1, bound)
        }
        BoundCheckKind::QuantumMain => (None, delta, eps),
    };

    let damping_spec = match which {
        BoundCheckKind::CorDamped => Some(
            damping
                .cloned()
                .unwrap_or(DampedSpec::constant(0.5, centers0.k())?),
        ),
        _ => None,
    };
    let default_config = EmulationConfig::default();
    let config = config.unwrap_or(&default_config);

    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let trial_seed = derive_seed(seed, &[trial as u64]);
            match which {
                BoundCheckKind::ThmMain => {
                    let batch = sample_indices(
                        data.n(),
                        b.unwrap(),
                        SamplingScheme::Uniform,
                        data,
                        trial_seed,
                    )?;
                    let (c_hat, _) = minibatch_step_with_batch(
                        data,
                        centers0,
                        batch,
                        Some(&sizes),
                        EmptyClusterFallback::KeepInitial,
                    )?;
                    let (_, weighted) = center_error(&c_ref, &c_hat, &sizes, data.n())?;
                    Ok(weighted)
                }
                BoundCheckKind::CorMonotone => {
                    let batch = sample_indices(
                        data.n(),
                        b.unwrap(),
                        SamplingScheme::Uniform,
                        data,
                        trial_seed,
                    )?;
                    let (c_hat, _) = minibatch_step_with_batch(
                        data,
                        centers0,
                        batch,
                        Some(&sizes),
                        EmptyClusterFallback::KeepInitial,
                    )?;
                    cost(data, &c_hat)
                }
                BoundCheckKind::CorDamped => {
                    let batch = sample_indices(
                        data.n(),
                        b.unwrap(),
                        SamplingScheme::Uniform,
                        data,
                        trial_seed,
                    )?;
                    let (c_hat, _) = crate::samplers::damped_minibatch_step_with_batch(
                        data,
                        centers0,
                        batch,
                        damping_spec.as_ref().expect("per-kind setup"),
                        Some(&sizes),
                        EmptyClusterFallback::KeepInitial,
                    )?;
                    cost(data, &c_hat)
                }
                BoundCheckKind::QuantumMain => {
                    let out = quantum_kmeans_step(data, centers0, eps, delta, config, trial_seed)?;
                    let (max_err, _) = center_error(&c_ref, &out.centers, &sizes, data.n())?;
                    Ok(max_err)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let failures = per_trial.iter().filter(|&&s| s > threshold).count();
    let failure_rate = failures as f64 / trials as f64;
    let sigma = (delta_target * (1.0 - delta_target) / trials as f64).sqrt();
    let band = delta_target + 3.0 * sigma;
    Ok(BoundCheckReport {
        which: which.to_string(),
        b,
        eps,
        delta: delta_target,
        trials,
        failures,
        failure_rate,
        sigma,
        band,
        pass: failure_rate <= band,
        threshold,
        phi: diag.phi,
        k_c: diag.k_c,
        per_trial,
    })
}

/// Canned instances used by the harness and the test suites.
pub mod presets {
    use super::*;
    use crate::linalg::sq_dist;

    /// Four well-separated Gaussian clusters in the plane, placed away from
    /// the origin so that norm-weighted sampling has no balance advantage and
    /// `phi` stays far below the norm parameters.
    pub fn small_phi_mixture(
        points_per_cluster: usize,
        std: f64,
        seed: u64,
    ) -> Result<(DataSet, Centers)> {
        let spec = MixtureSpec {
            k: 4,
            means: vec![
                vec![4.0, 4.0],
                vec![4.0, 6.0],
                vec![6.0, 4.0],
                vec![6.0, 6.0],
            ],
            stds: vec![std; 4],
            points_per_cluster,
        };
        generate_gaussian_mixture(&spec, seed)
    }

    /// A JL-projected mixture standing in for a large labeled corpus: `k`
    /// Gaussian clusters in `raw_dim` dimensions embedded down to
    /// `target_dim`. Returns the projected data and projected true means.
    pub fn jl_corpus(
        k: usize,
        raw_dim: usize,
        target_dim: usize,
        points_per_cluster: usize,
        std: f64,
        seed: u64,
    ) -> Result<(DataSet, Centers)> {
        let spec = MixtureSpec::with_random_means(
            k,
            raw_dim,
            std,
            points_per_cluster,
            5.0,
            derive_seed(seed, &[0]),
        )?;
        let (raw, means) = generate_gaussian_mixture(&spec, derive_seed(seed, &[1]))?;
        let proj_seed = derive_seed(seed, &[2]);
        let data = jl_project(&raw, target_dim, proj_seed)?;
        let means_data = DataSet::new(means.coords().clone())?;
        let projected_means = jl_project(&means_data, target_dim, proj_seed)?;
        let centers = Centers::new(projected_means.points().clone())?;
        Ok((data, centers))
    }

    /// k-means++ seeding (D^2 sampling). Provided as a convenience
    /// initializer; no approximation guarantee is claimed here.
    pub fn kmeans_plusplus(data: &DataSet, k: usize, seed: u64) -> Result<Centers> {
        if k == 0 || k > data.n() {
            return Err(Error::InvalidParameter(format!(
                "k must lie in [1, {}], got {k}",
                data.n()
            )));
        }
        let mut rng = crate::seeding::rng_from(seed);
        let mut chosen: Vec<usize> = vec![rng.random_range(0..data.n())];
        let mut best_sq: Vec<f64> = (0..data.n())
            .map(|i| sq_dist(data.point(i), data.point(chosen[0])))
            .collect();
        while chosen.len() < k {
            let total: f64 = best_sq.iter().sum();
            let next = if total > 0.0 {
                let r = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = data.n() - 1;
                for (i, &w) in best_sq.iter().enumerate() {
                    acc += w;
                    if acc > r {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                // all remaining mass at chosen points; fall back to uniform
                rng.random_range(0..data.n())
            };
            chosen.push(next);
            for i in 0..data.n() {
                best_sq[i] = best_sq[i].min(sq_dist(data.point(i), data.point(next)));
            }
        }
        let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| data.point(i).to_vec()).collect();
        Centers::from_rows(&rows)
    }
}
