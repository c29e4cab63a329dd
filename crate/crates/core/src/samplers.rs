//! Randomized one-step updates and the sampling primitives behind them.
//!
//! All sampling is i.i.d. with replacement and every public entry point takes
//! an explicit seed. The `*_with_batch` variants expose the batch as an input
//! so tests can force degenerate batches (e.g. the full-batch case, which must
//! reproduce the Lloyd step bit for bit).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::kmeans::{assign, means_with_fallback, nearest_center, Centers};
use crate::linalg::{dist, sq_dist, Matrix};
use crate::seeding::{derive_seed, rng_from};

/// Batch indices above this length are elided from JSON reports.
pub const BATCH_ELISION_THRESHOLD: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    Uniform,
    RowNorm,
    RowNormSquared,
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SamplingScheme::Uniform => "uniform",
            SamplingScheme::RowNorm => "row-norm",
            SamplingScheme::RowNormSquared => "row-norm-squared",
        };
        f.write_str(s)
    }
}

impl FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "uniform" => Ok(Self::Uniform),
            "row-norm" => Ok(Self::RowNorm),
            "row-norm-squared" => Ok(Self::RowNormSquared),
            other => Err(Error::InvalidParameter(format!(
                "unknown sampling scheme '{other}'"
            ))),
        }
    }
}

/// A multiset of `b` sampled indices (0-based, drawn with replacement).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub b: usize,
    pub scheme: SamplingScheme,
}

impl Batch {
    /// Explicit batch, used by tests and by the full-batch degeneracy.
    pub fn forced(indices: Vec<usize>, scheme: SamplingScheme) -> Self {
        let b = indices.len();
        Self { indices, b, scheme }
    }

    pub fn full(n: usize) -> Self {
        Self::forced((0..n).collect(), SamplingScheme::Uniform)
    }
}

/// Per-cluster damping coefficients in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DampedSpec {
    alphas: Vec<f64>,
}

impl DampedSpec {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidParameter(
                "damping coefficients must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { alphas })
    }

    pub fn constant(alpha: f64, k: usize) -> Result<Self> {
        Self::new(vec![alpha; k])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn min(&self) -> f64 {
        self.alphas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.alphas.iter().copied().fold(0.0, f64::max)
    }
}

/// What happens to a cluster whose batch slice came up empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyClusterFallback {
    /// Keep the initial center and flag the cluster. Preserves the sublinear
    /// per-step cost.
    #[default]
    KeepInitial,
    /// Recompute the exact mean of the missed cluster with a full pass over
    /// the data (flagged either way).
    ExactMean,
}

/// What a sampled step saw: clusters its batch missed, the per-cluster
/// size-ratio statistics `b |C_j^0| / (n |batch C_j^0|)` (None where the batch
/// cluster is empty), and the batch itself.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub empty_clusters: Vec<usize>,
    pub lambda_hats: Vec<Option<f64>>,
    pub batch: Batch,
}

impl StepReport {
    /// JSON form; batch indices longer than [`BATCH_ELISION_THRESHOLD`] are
    /// replaced by null.
    pub fn to_json(&self) -> serde_json::Value {
        let indices = if self.batch.indices.len() > BATCH_ELISION_THRESHOLD {
            serde_json::Value::Null
        } else {
            json!(self.batch.indices)
        };
        json!({
            "empty_clusters": self.empty_clusters,
            "lambda_hats": self.lambda_hats,
            "batch": {
                "b": self.batch.b,
                "scheme": self.batch.scheme,
                "indices": indices,
            },
        })
    }
}

fn scheme_weights(data: &DataSet, scheme: SamplingScheme) -> Result<Option<Vec<f64>>> {
    let weights = match scheme {
        SamplingScheme::Uniform => return Ok(None),
        SamplingScheme::RowNorm => data.row_sq_norms().iter().map(|s| s.sqrt()).collect(),
        SamplingScheme::RowNormSquared => data.row_sq_norms(),
    };
    Ok(Some(weights))
}

/// Per-index sampling probabilities under a scheme.
pub fn scheme_probabilities(data: &DataSet, scheme: SamplingScheme) -> Result<Vec<f64>> {
    match scheme_weights(data, scheme)? {
        None => Ok(vec![1.0 / data.n() as f64; data.n()]),
        Some(w) => {
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::ZeroNormData);
            }
            Ok(w.into_iter().map(|x| x / total).collect())
        }
    }
}

/// Draws `b` i.i.d. indices from `[0, n)` under the scheme's distribution.
pub fn sample_indices(
    n: usize,
    b: usize,
    scheme: SamplingScheme,
    data: &DataSet,
    seed: u64,
) -> Result<Batch> {
    if n == 0 || b == 0 {
        return Err(Error::InvalidParameter("n and b must be positive".into()));
    }
    if n != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "n = {n} but dataset has {} rows",
            data.n()
        )));
    }
    let mut rng = rng_from(seed);
    let indices = match scheme_weights(data, scheme)? {
        None => (0..b).map(|_| rng.random_range(0..n)).collect(),
        Some(weights) => {
            // restrict to positive weights so zero-norm rows are never drawn
            let positive: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
            if positive.is_empty() {
                return Err(Error::ZeroNormData);
            }
            let mut cumsum = Vec::with_capacity(positive.len());
            let mut acc = 0.0;
            for &i in &positive {
                acc += weights[i];
                cumsum.push(acc);
            }
            let total = acc;
            (0..b)
                .map(|_| {
                    let r = rng.random::<f64>() * total;
                    let pos = cumsum.partition_point(|&c| c <= r).min(positive.len() - 1);
                    positive[pos]
                })
                .collect()
        }
    };
    Ok(Batch { indices, b, scheme })
}

fn full_cluster_sizes(
    data: &DataSet,
    centers0: &Centers,
    provided: Option<&[usize]>,
) -> Result<Vec<usize>> {
    match provided {
        Some(s) => {
            if s.len() != centers0.k() {
                return Err(Error::DimensionMismatch(format!(
                    "sizes has length {}, expected {}",
                    s.len(),
                    centers0.k()
                )));
            }
            Ok(s.to_vec())
        }
        None => Ok(assign(data, centers0)?.sizes().to_vec()),
    }
}

fn lambda_hats(
    batch_len: usize,
    n: usize,
    full_sizes: &[usize],
    batch_sizes: &[usize],
) -> Vec<Option<f64>> {
    full_sizes
        .iter()
        .zip(batch_sizes)
        .map(|(&cj, &hat)| {
            (hat > 0).then(|| (batch_len as f64 * cj as f64) / (n as f64 * hat as f64))
        })
        .collect()
}

/// Batch means only; no report assembly and no full-data pass.
pub(crate) fn minibatch_update(
    data: &DataSet,
    centers0: &Centers,
    batch: &Batch,
) -> Result<(Centers, Vec<usize>, Vec<usize>)> {
    if data.d() != centers0.d() {
        return Err(Error::DimensionMismatch(format!(
            "data is {}-dimensional, centers are {}-dimensional",
            data.d(),
            centers0.d()
        )));
    }
    if let Some(&bad) = batch.indices.iter().find(|&&i| i >= data.n()) {
        return Err(Error::InvalidParameter(format!(
            "batch index {bad} out of range"
        )));
    }
    Ok(means_with_fallback(
        data,
        batch.indices.iter().copied(),
        |i| nearest_center(centers0, data.point(i)),
        centers0,
    ))
}

/// Replaces the centers of missed clusters with their exact means (one full
/// pass); initial clusters that are themselves empty keep their center.
fn apply_exact_fallback(
    data: &DataSet,
    centers0: &Centers,
    centers: &mut Centers,
    missed: &[usize],
) -> Result<()> {
    if missed.is_empty() {
        return Ok(());
    }
    let assignment = assign(data, centers0)?;
    let labels = assignment.labels().to_vec();
    let (exact, _, _) = means_with_fallback(data, 0..data.n(), |i| labels[i], centers0);
    let mut coords = centers.coords().clone();
    for &j in missed {
        coords.row_mut(j).copy_from_slice(exact.center(j));
    }
    *centers = Centers::new(coords)?;
    Ok(())
}

/// One mini-batch k-means iteration on an explicit batch.
///
/// `full_sizes` are the exact cluster sizes under `centers0`; when absent they
/// are recomputed (one full pass) for the report's lambda statistics.
pub fn minibatch_step_with_batch(
    data: &DataSet,
    centers0: &Centers,
    batch: Batch,
    full_sizes: Option<&[usize]>,
    fallback: EmptyClusterFallback,
) -> Result<(Centers, StepReport)> {
    let sizes = full_cluster_sizes(data, centers0, full_sizes)?;
    let (mut centers, batch_counts, empty) = minibatch_update(data, centers0, &batch)?;
    if fallback == EmptyClusterFallback::ExactMean {
        apply_exact_fallback(data, centers0, &mut centers, &empty)?;
    }
    let lambdas = lambda_hats(batch.indices.len(), data.n(), &sizes, &batch_counts);
    Ok((
        centers,
        StepReport {
            empty_clusters: empty,
            lambda_hats: lambdas,
            batch,
        },
    ))
}

/// One uniform mini-batch k-means iteration: sample `b` indices uniformly with
/// replacement, then take per-cluster batch means against `centers0`.
pub fn minibatch_step(
    data: &DataSet,
    centers0: &Centers,
    b: usize,
    seed: u64,
) -> Result<(Centers, StepReport)> {
    let batch = sample_indices(data.n(), b, SamplingScheme::Uniform, data, seed)?;
    minibatch_step_with_batch(
        data,
        centers0,
        batch,
        None,
        EmptyClusterFallback::KeepInitial,
    )
}

/// Damped variant: interpolates `(1 - alpha_j) c_j^0 + alpha_j c_j_hat` with
/// the undamped update from the same batch.
pub fn damped_minibatch_step_with_batch(
    data: &DataSet,
    centers0: &Centers,
    batch: Batch,
    damping: &DampedSpec,
    full_sizes: Option<&[usize]>,
    fallback: EmptyClusterFallback,
) -> Result<(Centers, StepReport)> {
    if damping.alphas().len() != centers0.k() {
        return Err(Error::DimensionMismatch(format!(
            "{} damping coefficients for {} clusters",
            damping.alphas().len(),
            centers0.k()
        )));
    }
    let (undamped, report) =
        minibatch_step_with_batch(data, centers0, batch, full_sizes, fallback)?;
    let mut coords = Matrix::zeros(centers0.k(), centers0.d());
    for j in 0..centers0.k() {
        let a = damping.alphas()[j];
        let row = coords.row_mut(j);
        for ((o, c0), c1) in row
            .iter_mut()
            .zip(centers0.center(j))
            .zip(undamped.center(j))
        {
            *o = (1.0 - a) * c0 + a * c1;
        }
    }
    Ok((Centers::new(coords)?, report))
}

pub fn damped_minibatch_step(
    data: &DataSet,
    centers0: &Centers,
    b: usize,
    damping: &DampedSpec,
    seed: u64,
) -> Result<(Centers, StepReport)> {
    let batch = sample_indices(data.n(), b, SamplingScheme::Uniform, data, seed)?;
    damped_minibatch_step_with_batch(
        data,
        centers0,
        batch,
        damping,
        None,
        EmptyClusterFallback::KeepInitial,
    )
}

/// The norm-sampled estimator on explicit batches; no report assembly.
pub(crate) fn dlt_update(
    data: &DataSet,
    centers0: &Centers,
    uniform_batch: &Batch,
    weighted_batch: &Batch,
    probs: &[f64],
) -> Result<(Centers, Vec<usize>, Vec<usize>)> {
    if data.d() != centers0.d() {
        return Err(Error::DimensionMismatch(format!(
            "data is {}-dimensional, centers are {}-dimensional",
            data.d(),
            centers0.d()
        )));
    }
    if probs.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "probs has length {}, expected {}",
            probs.len(),
            data.n()
        )));
    }
    let k = centers0.k();
    let d = centers0.d();
    let n = data.n();
    let a = uniform_batch.indices.len();
    let b = weighted_batch.indices.len();

    let mut size_est = vec![0usize; k];
    for &i in &uniform_batch.indices {
        size_est[nearest_center(centers0, data.point(i))] += 1;
    }

    let mut weighted_counts = vec![0usize; k];
    let mut sums = Matrix::zeros(k, d);
    for &i in &weighted_batch.indices {
        let j = nearest_center(centers0, data.point(i));
        weighted_counts[j] += 1;
        let p = probs[i];
        if !(p > 0.0) {
            return Err(Error::ZeroProbabilitySample { index: i });
        }
        let scale = 1.0 / (b as f64 * p);
        for (acc, x) in sums.row_mut(j).iter_mut().zip(data.point(i)) {
            *acc += scale * x;
        }
    }

    let mut coords = Matrix::zeros(k, d);
    let mut empty = Vec::new();
    for j in 0..k {
        if size_est[j] == 0 || weighted_counts[j] == 0 {
            empty.push(j);
            coords.row_mut(j).copy_from_slice(centers0.center(j));
        } else {
            let scale = a as f64 / (n as f64 * size_est[j] as f64);
            for (o, s) in coords.row_mut(j).iter_mut().zip(sums.row(j)) {
                *o = scale * s;
            }
        }
    }
    Ok((Centers::new(coords)?, size_est, empty))
}

/// The two-batch norm-sampled competitor on explicit batches.
///
/// `uniform_batch` (size a) estimates cluster sizes; `weighted_batch` (size b,
/// probabilities `probs`) estimates the per-cluster sums through importance
/// weighting. Clusters missed by either batch keep their initial center and
/// are flagged. The report's lambda statistics come from the uniform batch and
/// `report.batch` is the weighted one.
pub fn dlt_step_with_batches(
    data: &DataSet,
    centers0: &Centers,
    uniform_batch: &Batch,
    weighted_batch: Batch,
    probs: &[f64],
    full_sizes: Option<&[usize]>,
) -> Result<(Centers, StepReport)> {
    let (centers, size_est, empty) =
        dlt_update(data, centers0, uniform_batch, &weighted_batch, probs)?;
    let sizes = full_cluster_sizes(data, centers0, full_sizes)?;
    let lambdas = lambda_hats(uniform_batch.indices.len(), data.n(), &sizes, &size_est);
    let report = StepReport {
        empty_clusters: empty,
        lambda_hats: lambdas,
        batch: weighted_batch,
    };
    Ok((centers, report))
}

/// One iteration of the norm-sampled competitor: a uniform batch of size `a`
/// and an independent weighted batch of size `b`.
pub fn dlt_step(
    data: &DataSet,
    centers0: &Centers,
    a: usize,
    b: usize,
    scheme: SamplingScheme,
    seed: u64,
) -> Result<(Centers, StepReport)> {
    if scheme == SamplingScheme::Uniform {
        return Err(Error::InvalidParameter(
            "dlt_step requires a norm-weighted scheme (row-norm or row-norm-squared)".into(),
        ));
    }
    if a == 0 || b == 0 {
        return Err(Error::InvalidParameter(
            "batch sizes a and b must be positive".into(),
        ));
    }
    let n = data.n();
    let uniform = sample_indices(n, a, SamplingScheme::Uniform, data, derive_seed(seed, &[0]))?;
    let weighted = sample_indices(n, b, scheme, data, derive_seed(seed, &[1]))?;
    let probs = scheme_probabilities(data, scheme)?;
    dlt_step_with_batches(data, centers0, &uniform, weighted, &probs, None)
}

/// Importance-sampling estimate of `A x` from a batch of column indices:
/// `y_hat = (1/b) sum_s A[:, s] x_s / p_s`.
pub fn importance_estimator(
    a: &Matrix,
    x: &[f64],
    probs: &[f64],
    batch: &Batch,
) -> Result<Vec<f64>> {
    let n = a.cols();
    if x.len() != n || probs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "A has {n} columns, x has {}, probs has {}",
            x.len(),
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::ProbabilityNormalization {
            sum: total,
            tol: 1e-9,
        });
    }
    let b = batch.indices.len() as f64;
    let mut out = vec![0.0; a.rows()];
    for &s in &batch.indices {
        if s >= n {
            return Err(Error::InvalidParameter(format!(
                "batch index {s} out of range"
            )));
        }
        if x[s] == 0.0 {
            continue;
        }
        if !(probs[s] > 0.0) {
            return Err(Error::ZeroProbabilitySample { index: s });
        }
        let w = x[s] / (b * probs[s]);
        for (o, p) in out.iter_mut().zip(0..a.rows()) {
            *o += w * a.get(p, s);
        }
    }
    Ok(out)
}

/// Distance used by the median trick over flattened center vectors.
#[derive(Debug, Clone)]
pub enum MedianMetric {
    Euclidean,
    /// `sqrt((1/n) sum_j sizes_j ||c_j - c'_j||^2)` over k = sizes.len()
    /// equally sized chunks of the flattened vectors.
    ClusterWeighted {
        sizes: Vec<usize>,
        n: usize,
    },
}

impl MedianMetric {
    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            MedianMetric::Euclidean => dist(x, y),
            MedianMetric::ClusterWeighted { sizes, n } => {
                let k = sizes.len();
                assert!(
                    k > 0 && x.len().is_multiple_of(k),
                    "flattened length must be divisible by k"
                );
                let d = x.len() / k;
                let mut acc = 0.0;
                for j in 0..k {
                    acc +=
                        sizes[j] as f64 * sq_dist(&x[j * d..(j + 1) * d], &y[j * d..(j + 1) * d]);
                }
                (acc / *n as f64).sqrt()
            }
        }
    }
}

/// Index selected by the high-dimensional median trick: the candidate whose
/// median distance to all candidates (self included) is smallest. Lower median
/// on even lists; argmin ties go to the lowest index.
pub fn median_trick_index(candidates: &[Vec<f64>], metric: &MedianMetric) -> Result<usize> {
    let t = candidates.len();
    if t == 0 {
        return Err(Error::EmptyCandidates);
    }
    let dim = candidates[0].len();
    if candidates.iter().any(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch(
            "candidates must share a dimension".into(),
        ));
    }
    let mut best = 0;
    let mut best_med = f64::INFINITY;
    for i in 0..t {
        let mut dists: Vec<f64> = candidates
            .iter()
            .map(|c| metric.distance(&candidates[i], c))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
        let med = dists[(t - 1) / 2];
        if med < best_med {
            best = i;
            best_med = med;
        }
    }
    Ok(best)
}

/// The winning candidate itself; see [`median_trick_index`].
pub fn median_trick(candidates: &[Vec<f64>], metric: &MedianMetric) -> Result<Vec<f64>> {
    Ok(candidates[median_trick_index(candidates, metric)?].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::hard_instance;
    use crate::kmeans::lloyd_step;

    #[test]
    fn uniform_single_point() {
        let data = DataSet::from_rows(&[vec![5.0]]).unwrap();
        let batch = sample_indices(1, 8, SamplingScheme::Uniform, &data, 3).unwrap();
        assert!(batch.indices.iter().all(|&i| i == 0));
    }

    #[test]
    fn row_norm_squared_hits_match_closed_form() {
        let alpha = 3.0;
        let (data, _) = hard_instance(1000, alpha).unwrap();
        let p = 1.0 / (1.0 + alpha * alpha);
        let draws = 100_000;
        let batch = sample_indices(1000, draws, SamplingScheme::RowNormSquared, &data, 17).unwrap();
        let hits = batch.indices.iter().filter(|&&i| i < 500).count() as f64;
        let freq = hits / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * se,
            "freq {freq} vs p {p} (se {se})"
        );
    }

    #[test]
    fn uniform_multinomial_concentration() {
        let n = 10_000;
        let b = 10_000;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let data = DataSet::from_rows(&rows).unwrap();
        let batch = sample_indices(n, b, SamplingScheme::Uniform, &data, 0).unwrap();
        let mut counts = vec![0usize; n];
        for &i in &batch.indices {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let se = (p * (1.0 - p) / b as f64).sqrt();
        // half-count continuity correction: the counts are integers with
        // expectation 1, so the deviation is measured from the cell boundary
        let correction = 0.5 / b as f64;
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / b as f64;
            let dev = ((freq - p).abs() - correction).max(0.0);
            assert!(dev <= 5.0 * se, "index {i} drawn {c} times");
        }
    }

    #[test]
    fn zero_norm_data_rejected_for_weighted() {
        let data = DataSet::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        assert!(matches!(
            sample_indices(2, 4, SamplingScheme::RowNormSquared, &data, 1),
            Err(Error::ZeroNormData)
        ));
    }

    #[test]
    fn zero_norm_rows_never_drawn() {
        let data = DataSet::from_rows(&[vec![0.0], vec![2.0], vec![0.0]]).unwrap();
        let batch = sample_indices(3, 200, SamplingScheme::RowNorm, &data, 5).unwrap();
        assert!(batch.indices.iter().all(|&i| i == 1));
    }

    #[test]
    fn full_batch_equals_lloyd_bitwise() {
        let (data, centers0) = hard_instance(20, 3.0).unwrap();
        let (lloyd, _) = lloyd_step(&data, &centers0).unwrap();
        let (mb, report) = minibatch_step_with_batch(
            &data,
            &centers0,
            Batch::full(20),
            None,
            EmptyClusterFallback::KeepInitial,
        )
        .unwrap();
        assert_eq!(mb, lloyd);
        assert!(report.empty_clusters.is_empty());
        for l in &report.lambda_hats {
            assert_eq!(*l, Some(1.0));
        }
    }

    #[test]
    fn minibatch_recovers_hard_instance_when_both_halves_hit() {
        let (data, centers0) = hard_instance(1000, 2.0).unwrap();
        for seed in 0..100u64 {
            let (c, report) = minibatch_step(&data, &centers0, 64, seed).unwrap();
            let hit_both = report.batch.indices.iter().any(|&i| i < 500)
                && report.batch.indices.iter().any(|&i| i >= 500);
            assert!(hit_both, "missing a half at b = 64 is a ~2^-63 event");
            assert_eq!(c.center(0), &[-1.0]);
            assert_eq!(c.center(1), &[2.0]);
        }
    }

    #[test]
    fn minibatch_flags_missed_cluster() {
        let (data, centers0) = hard_instance(10, 3.0).unwrap();
        let batch = Batch::forced(vec![0, 1, 2], SamplingScheme::Uniform);
        let (c, report) = minibatch_step_with_batch(
            &data,
            &centers0,
            batch,
            None,
            EmptyClusterFallback::KeepInitial,
        )
        .unwrap();
        assert_eq!(report.empty_clusters, vec![1]);
        assert_eq!(c.center(1), centers0.center(1));
        assert_eq!(report.lambda_hats[1], None);
        assert!(report.lambda_hats[0].is_some());
    }

    #[test]
    fn exact_fallback_recomputes_missed_cluster() {
        let (data, centers0) = hard_instance(10, 3.0).unwrap();
        // batch drawn entirely from the alpha cluster: cluster 0 is missed
        let batch = Batch::forced(vec![7, 8, 9], SamplingScheme::Uniform);
        let (kept, report) = minibatch_step_with_batch(
            &data,
            &centers0,
            batch.clone(),
            None,
            EmptyClusterFallback::KeepInitial,
        )
        .unwrap();
        assert_eq!(report.empty_clusters, vec![0]);
        assert_eq!(kept.center(0), &[0.0], "cheap fallback keeps c_0^0");

        let (exact, report) = minibatch_step_with_batch(
            &data,
            &centers0,
            batch,
            None,
            EmptyClusterFallback::ExactMean,
        )
        .unwrap();
        assert_eq!(report.empty_clusters, vec![0], "still flagged");
        assert_eq!(
            exact.center(0),
            &[-1.0],
            "full pass recovers the exact mean"
        );
        assert_eq!(exact.center(1), &[3.0]);
    }

    #[test]
    fn damped_limits() {
        let (data, centers0) = hard_instance(100, 2.0).unwrap();
        let seed = 9;
        let (undamped, _) = minibatch_step(&data, &centers0, 16, seed).unwrap();

        let ones = DampedSpec::constant(1.0, 2).unwrap();
        let (c1, _) = damped_minibatch_step(&data, &centers0, 16, &ones, seed).unwrap();
        assert_eq!(c1, undamped, "alpha = 1 must reproduce the undamped step");

        let zeros = DampedSpec::constant(0.0, 2).unwrap();
        let (c0, _) = damped_minibatch_step(&data, &centers0, 16, &zeros, seed).unwrap();
        assert_eq!(c0, centers0, "alpha = 0 must keep the initial centers");
    }

    #[test]
    fn damped_half_full_batch_is_midpoint() {
        let (data, centers0) = hard_instance(12, 3.0).unwrap();
        let half = DampedSpec::constant(0.5, 2).unwrap();
        let (lloyd, _) = lloyd_step(&data, &centers0).unwrap();
        let (c, _) = damped_minibatch_step_with_batch(
            &data,
            &centers0,
            Batch::full(12),
            &half,
            None,
            EmptyClusterFallback::KeepInitial,
        )
        .unwrap();
        for j in 0..2 {
            let want = 0.5 * centers0.center(j)[0] + 0.5 * lloyd.center(j)[0];
            assert_eq!(c.center(j)[0], want);
        }
    }

    #[test]
    fn damped_spec_validation() {
        assert!(DampedSpec::new(vec![0.0, 1.0, 0.5]).is_ok());
        assert!(DampedSpec::new(vec![1.1]).is_err());
        assert!(DampedSpec::new(vec![-0.1]).is_err());
        assert!(DampedSpec::new(vec![]).is_err());
    }

    #[test]
    fn dlt_unbiased_by_enumeration() {
        // n = 3, k = 1, b = 2, forced full uniform batch: averaging the
        // estimator over all 9 weighted batches with their exact probabilities
        // must give the Lloyd center.
        let data = DataSet::from_rows(&[vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, -1.0]]).unwrap();
        let centers0 = Centers::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let probs = scheme_probabilities(&data, SamplingScheme::RowNormSquared).unwrap();
        let uniform = Batch::full(3);
        let mut expectation = [0.0; 2];
        for s1 in 0..3 {
            for s2 in 0..3 {
                let weighted = Batch::forced(vec![s1, s2], SamplingScheme::RowNormSquared);
                let (c, _) =
                    dlt_step_with_batches(&data, &centers0, &uniform, weighted, &probs, None)
                        .unwrap();
                let pr = probs[s1] * probs[s2];
                for (e, x) in expectation.iter_mut().zip(c.center(0)) {
                    *e += pr * x;
                }
            }
        }
        let (lloyd, _) = lloyd_step(&data, &centers0).unwrap();
        for (e, c) in expectation.iter().zip(lloyd.center(0)) {
            assert!((e - c).abs() < 1e-12, "enumerated mean {e} vs lloyd {c}");
        }
    }

    #[test]
    fn dlt_rarely_hits_low_norm_cluster() {
        let alpha = 100.0;
        let (data, centers0) = hard_instance(1000, alpha).unwrap();
        let sizes = assign(&data, &centers0).unwrap().sizes().to_vec();
        let trials = 10_000;
        let b = 32;
        let mut hits = 0;
        for t in 0..trials {
            let (c, report) = dlt_step(
                &data,
                &centers0,
                b,
                b,
                SamplingScheme::RowNormSquared,
                derive_seed(31, &[t as u64]),
            )
            .unwrap();
            let hit = report.batch.indices.iter().any(|&i| i < 500);
            if hit {
                hits += 1;
            } else {
                assert_eq!(
                    c.center(0),
                    centers0.center(0),
                    "missed cluster keeps its center"
                );
                assert!(report.empty_clusters.contains(&0));
            }
            let _ = sizes.len();
        }
        let p = 1.0 - (1.0 - 1.0 / (1.0 + alpha * alpha)).powi(b as i32);
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        let freq = hits as f64 / trials as f64;
        assert!(
            (freq - p).abs() <= 3.0 * se,
            "hit rate {freq} vs {p} (se {se})"
        );
    }

    #[test]
    fn dlt_symmetric_instance_converges_with_large_batches() {
        let (data, centers0) = hard_instance(1000, 1.0).unwrap();
        for scheme in [SamplingScheme::RowNorm, SamplingScheme::RowNormSquared] {
            let (c, _) = dlt_step(&data, &centers0, 10_000, 10_000, scheme, 7).unwrap();
            assert!(
                (c.center(0)[0] + 1.0).abs() < 0.05,
                "{scheme}: {:?}",
                c.center(0)
            );
            assert!(
                (c.center(1)[0] - 1.0).abs() < 0.05,
                "{scheme}: {:?}",
                c.center(1)
            );
        }
    }

    #[test]
    fn dlt_rejects_uniform_scheme() {
        let (data, centers0) = hard_instance(10, 2.0).unwrap();
        assert!(dlt_step(&data, &centers0, 4, 4, SamplingScheme::Uniform, 1).is_err());
    }

    #[test]
    fn importance_estimator_zero_vector() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let x = vec![0.0; 3];
        let probs = vec![1.0 / 3.0; 3];
        for s1 in 0..3 {
            for s2 in 0..3 {
                let batch = Batch::forced(vec![s1, s2], SamplingScheme::Uniform);
                let y = importance_estimator(&a, &x, &probs, &batch).unwrap();
                assert_eq!(y, vec![0.0, 0.0]);
            }
        }
    }

    #[test]
    fn importance_estimator_concentrated_probs() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let x = vec![0.0, 5.0];
        let probs = vec![0.0, 1.0];
        let batch = Batch::forced(vec![1, 1, 1], SamplingScheme::Uniform);
        let y = importance_estimator(&a, &x, &probs, &batch).unwrap();
        assert_eq!(y, vec![2.0 * 5.0, 4.0 * 5.0]);
    }

    #[test]
    fn importance_estimator_zero_probability_error() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let x = vec![1.0, 1.0];
        let probs = vec![1.0, 0.0];
        let batch = Batch::forced(vec![1], SamplingScheme::Uniform);
        assert!(matches!(
            importance_estimator(&a, &x, &probs, &batch),
            Err(Error::ZeroProbabilitySample { index: 1 })
        ));
    }

    #[test]
    fn importance_estimator_checks_normalization() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let batch = Batch::forced(vec![0], SamplingScheme::Uniform);
        assert!(matches!(
            importance_estimator(&a, &[1.0, 1.0], &[0.7, 0.7], &batch),
            Err(Error::ProbabilityNormalization { .. })
        ));
    }

    #[test]
    fn median_trick_degenerate_and_line_example() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert_eq!(
            median_trick(&same, &MedianMetric::Euclidean).unwrap(),
            vec![1.0, 2.0]
        );

        let cands: Vec<Vec<f64>> = [0.0, 0.1, -0.1, 10.0, 0.05]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let winner = median_trick(&cands, &MedianMetric::Euclidean).unwrap();
        assert_eq!(winner, vec![0.05]);
    }

    #[test]
    fn median_trick_permutation_invariant_winner() {
        let cands: Vec<Vec<f64>> = [0.0, 0.1, -0.1, 10.0, 0.05]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let base = median_trick(&cands, &MedianMetric::Euclidean).unwrap();
        // a few rotations of the list
        for shift in 1..5 {
            let mut rotated = cands.clone();
            rotated.rotate_left(shift);
            let w = median_trick(&rotated, &MedianMetric::Euclidean).unwrap();
            assert_eq!(w, base);
        }
    }

    #[test]
    fn median_trick_weighted_metric() {
        // two clusters, d = 1; the second cluster dominates the weighted metric
        let metric = MedianMetric::ClusterWeighted {
            sizes: vec![1, 99],
            n: 100,
        };
        let cands = vec![vec![0.0, 0.0], vec![5.0, 0.1], vec![5.1, 0.1]];
        // under the weighted metric the two candidates agreeing on the heavy
        // cluster are close; index 1 wins by the low-index tie rule
        let idx = median_trick_index(&cands, &metric).unwrap();
        assert_eq!(idx, 1);
    }

    #[test]
    fn median_trick_empty_error() {
        assert!(matches!(
            median_trick(&[], &MedianMetric::Euclidean),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn step_report_json_elides_large_batches() {
        let report = StepReport {
            empty_clusters: vec![],
            lambda_hats: vec![Some(1.0), None],
            batch: Batch::forced(
                vec![0; BATCH_ELISION_THRESHOLD + 1],
                SamplingScheme::Uniform,
            ),
        };
        let v = report.to_json();
        assert!(v["batch"]["indices"].is_null());
        assert_eq!(v["batch"]["b"], BATCH_ELISION_THRESHOLD + 1);

        let small = StepReport {
            empty_clusters: vec![1],
            lambda_hats: vec![Some(1.0), None],
            batch: Batch::forced(vec![3, 1], SamplingScheme::Uniform),
        };
        let v = small.to_json();
        assert_eq!(v["batch"]["indices"], json!([3, 1]));
        assert_eq!(v["lambda_hats"], json!([1.0, null]));
    }
}
