//! Classical emulation of the quantum one-step k-means update.
//!
//! The quantum step is modeled at the level of its probability distributions
//! and accuracy contracts rather than amplitudes: the boosted per-cluster
//! sampler becomes a perturbed distribution with `|p - p~| <= 4 sqrt(Delta)`,
//! and mean estimation returns the exact perturbed mean plus norm-bounded
//! noise, while an itemized ledger charges QRAM queries for every emulated
//! subroutine use.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::kmeans::{assign, diagnostics, Assignment, Centers, Diagnostics};
use crate::linalg::{sq_dist, sq_norm, stable_sum, Matrix, StableSum};
use crate::seeding::{derive_seed, rng_from};
use rand_chacha::ChaCha8Rng;

/// Floor for the perturbation budget when a cluster is degenerate
/// (`phi_j = 0` or `L_j = 0` makes the schedule formula collapse).
pub const DELTA_FLOOR: f64 = 1e-18;

/// How the emulated amplitude-amplification residual `Delta'` is chosen
/// subject to `Delta' <= Delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaPrimePolicy {
    /// `Delta' = Delta`, the adversarial extreme.
    WorstCase,
    /// `Delta'` uniform on `[0, Delta]`.
    UniformRandom,
}

impl fmt::Display for DeltaPrimePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::WorstCase => "worst-case",
            Self::UniformRandom => "uniform-random",
        })
    }
}

impl FromStr for DeltaPrimePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "worst-case" => Ok(Self::WorstCase),
            "uniform-random" => Ok(Self::UniformRandom),
            other => Err(Error::InvalidParameter(format!(
                "unknown delta-prime policy '{other}'"
            ))),
        }
    }
}

/// Where the leaked garbage mass lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GarbagePolicy {
    /// Uniform over indices outside the cluster (adversarial for the mean).
    /// Falls back to global uniform when the cluster covers every index.
    OffClusterUniform,
    /// Uniform over all indices.
    GlobalUniform,
}

impl fmt::Display for GarbagePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OffClusterUniform => "off-cluster-uniform",
            Self::GlobalUniform => "global-uniform",
        })
    }
}

impl FromStr for GarbagePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "off-cluster-uniform" => Ok(Self::OffClusterUniform),
            "global-uniform" => Ok(Self::GlobalUniform),
            other => Err(Error::InvalidParameter(format!(
                "unknown garbage policy '{other}'"
            ))),
        }
    }
}

/// Multipliers in front of the asymptotic query formulas (all 1 by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConstants {
    /// Mean estimation: `ceil(mean_est * sqrt(d) / eps_j)` oracle calls.
    pub mean_est: f64,
    /// Boosting: `ceil(boost * sqrt(n / |C_j|) * ln(1/Delta))` assignment-unitary
    /// uses per boosted-sampler invocation.
    pub boost: f64,
}

impl Default for OracleConstants {
    fn default() -> Self {
        Self {
            mean_est: 1.0,
            boost: 1.0,
        }
    }
}

/// Knobs for the unspecified freedoms of the emulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmulationConfig {
    pub delta_prime_policy: DeltaPrimePolicy,
    pub garbage_policy: GarbagePolicy,
    /// Radius multiplier applied on injected failure draws (>= 1).
    pub failure_blowup: f64,
    pub constants: OracleConstants,
    /// Test hook: skip both the distribution perturbation and the estimation
    /// noise so the step reduces to the exact Lloyd update.
    pub noiseless: bool,
}

impl Default for EmulationConfig {
    fn default() -> Self {
        Self {
            delta_prime_policy: DeltaPrimePolicy::WorstCase,
            garbage_policy: GarbagePolicy::OffClusterUniform,
            failure_blowup: 2.0,
            constants: OracleConstants::default(),
            noiseless: false,
        }
    }
}

impl EmulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.failure_blowup >= 1.0) {
            return Err(Error::InvalidParameter(
                "failure_blowup must be >= 1".into(),
            ));
        }
        if !(self.constants.mean_est > 0.0) || !(self.constants.boost > 0.0) {
            return Err(Error::InvalidParameter(
                "query-constant multipliers must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn noiseless() -> Self {
        Self {
            noiseless: true,
            failure_blowup: 1.0,
            ..Self::default()
        }
    }
}

/// A distribution over point indices attached to one cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterDistribution {
    pub probs: Vec<f64>,
    pub cluster: usize,
}

/// Itemized QRAM-query accounting for one emulated step.
///
/// - `cluster_assignment_queries`: the `k + 1` QRAM loads of each
///   cluster-assignment-unitary use made directly by a random-variable access.
/// - `boosting_queries`: QRAM loads of the assignment-unitary uses consumed
///   inside the boosted per-cluster sampler.
/// - `rv_access_queries`: the two extra QRAM loads of each random-variable
///   access.
/// - `mean_estimation_oracle_calls`: how many (sampler, access) oracle pairs
///   mean estimation charged.
///
/// `total` is defined as the sum of all four counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryLedger {
    pub cluster_assignment_queries: u64,
    pub boosting_queries: u64,
    pub rv_access_queries: u64,
    pub mean_estimation_oracle_calls: u64,
}

impl QueryLedger {
    pub fn total(&self) -> u64 {
        self.cluster_assignment_queries
            + self.boosting_queries
            + self.rv_access_queries
            + self.mean_estimation_oracle_calls
    }

    pub fn merge(&mut self, other: &QueryLedger) {
        self.cluster_assignment_queries += other.cluster_assignment_queries;
        self.boosting_queries += other.boosting_queries;
        self.rv_access_queries += other.rv_access_queries;
        self.mean_estimation_oracle_calls += other.mean_estimation_oracle_calls;
    }
}

impl Serialize for QueryLedger {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("QueryLedger", 5)?;
        s.serialize_field(
            "cluster_assignment_queries",
            &self.cluster_assignment_queries,
        )?;
        s.serialize_field("boosting_queries", &self.boosting_queries)?;
        s.serialize_field("rv_access_queries", &self.rv_access_queries)?;
        s.serialize_field(
            "mean_estimation_oracle_calls",
            &self.mean_estimation_oracle_calls,
        )?;
        s.serialize_field("total", &self.total())?;
        s.end()
    }
}

/// Uniform distribution over the members of cluster `j`.
pub fn cluster_distribution(assignment: &Assignment, j: usize) -> Result<ClusterDistribution> {
    if j >= assignment.k() {
        return Err(Error::InvalidParameter(format!(
            "cluster index {j} out of range for k = {}",
            assignment.k()
        )));
    }
    let size = assignment.sizes()[j];
    if size == 0 {
        return Err(Error::EmptyCluster { cluster: j });
    }
    let mut probs = vec![0.0; assignment.n()];
    let mass = 1.0 / size as f64;
    for &i in assignment.members(j) {
        probs[i] = mass;
    }
    Ok(ClusterDistribution { probs, cluster: j })
}

/// Mixes the exact cluster distribution with garbage mass:
/// `p~ = (1 - Delta') p + Delta' g` with `Delta' <= delta` chosen by policy.
///
/// The output always sums to one (checked to 1e-12) and deviates from `p` by
/// at most `4 sqrt(delta)` per entry, matching the amplitude-amplification
/// guarantee being emulated.
pub fn perturbed_distribution(
    p: &ClusterDistribution,
    delta: f64,
    config: &EmulationConfig,
    seed: u64,
) -> ClusterDistribution {
    assert!(
        delta > 0.0 && delta < 1.0,
        "delta must lie in (0, 1), got {delta}"
    );
    let n = p.probs.len();
    let mut rng = rng_from(seed);
    let delta_prime = match config.delta_prime_policy {
        DeltaPrimePolicy::WorstCase => delta,
        DeltaPrimePolicy::UniformRandom => rng.random::<f64>() * delta,
    };

    let off_cluster: Vec<usize> = (0..n).filter(|&i| p.probs[i] == 0.0).collect();
    let garbage: Box<dyn Fn(usize) -> f64> = match config.garbage_policy {
        GarbagePolicy::OffClusterUniform if !off_cluster.is_empty() => {
            let mass = 1.0 / off_cluster.len() as f64;
            let probs = p.probs.clone();
            Box::new(move |i| if probs[i] == 0.0 { mass } else { 0.0 })
        }
        _ => {
            let mass = 1.0 / n as f64;
            Box::new(move |_| mass)
        }
    };

    let probs: Vec<f64> = (0..n)
        .map(|i| (1.0 - delta_prime) * p.probs[i] + delta_prime * garbage(i))
        .collect();

    let sum = stable_sum(probs.iter().copied());
    assert!(
        (sum - 1.0).abs() <= 1e-12,
        "perturbed distribution sums to {sum}"
    );
    let bound = 4.0 * delta.sqrt() + 1e-12;
    let max_dev = probs
        .iter()
        .zip(&p.probs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        max_dev <= bound,
        "|p - p~| = {max_dev} exceeds 4 sqrt(delta) = {bound}"
    );

    ClusterDistribution {
        probs,
        cluster: p.cluster,
    }
}

/// The per-cluster accuracy schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonDelta {
    pub eps_j: f64,
    pub delta_j: f64,
    /// Set when `phi_j = 0` or `L_j = 0` forced the fallback branch.
    pub degenerate: bool,
}

/// Evaluates the accuracy split for cluster `j`:
/// `eps_j = min(eps / (3 sqrt(k_C phi_j)), ln(kd/delta) / sqrt(2d))` and
/// `Delta_j = min(1, eps_j^2) / (16 n^2 k_C^2) * (phi_j / L_j)^2`.
///
/// Degenerate clusters (`phi_j = 0` or `L_j = 0`) take the log-cap branch for
/// `eps_j`, the [`DELTA_FLOOR`] for `Delta_j`, and raise the flag.
pub fn epsilon_j_delta(
    diag: &Diagnostics,
    j: usize,
    eps: f64,
    delta_fail: f64,
    d: usize,
    k: usize,
) -> EpsilonDelta {
    assert!(eps > 0.0, "eps must be positive");
    assert!(
        delta_fail > 0.0 && delta_fail < 1.0,
        "delta_fail must lie in (0, 1)"
    );
    let phi_j = diag.phi_j[j];
    let l_j = diag.per_cluster_cost[j];
    let n = diag.n as f64;
    let cap = ((k as f64 * d as f64) / delta_fail).ln() / (2.0 * d as f64).sqrt();
    if phi_j <= 0.0 || l_j <= 0.0 {
        return EpsilonDelta {
            eps_j: cap,
            delta_j: DELTA_FLOOR,
            degenerate: true,
        };
    }
    let eps_j = (eps / (3.0 * (diag.k_c * phi_j).sqrt())).min(cap);
    let ratio = phi_j / l_j;
    let delta_j = eps_j.powi(2).min(1.0) / (16.0 * n * n * diag.k_c * diag.k_c) * ratio * ratio;
    EpsilonDelta {
        eps_j,
        delta_j,
        degenerate: false,
    }
}

fn unit_sphere_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = sq_norm(&v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub(crate) struct MeanEstimateDetail {
    pub mu_hat: Vec<f64>,
    #[allow(dead_code)] // exercised by the contract tests
    pub mu_tilde: Vec<f64>,
    pub trace: f64,
}

/// Shared backend for [`quantum_mean_estimate`]; also returns the exact
/// perturbed moments so the step can assert its variance cap.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mean_estimate_detail(
    data: &DataSet,
    centers0: &Centers,
    assignment: &Assignment,
    j: usize,
    p_tilde: &ClusterDistribution,
    eps_j: f64,
    delta: f64,
    delta_fail: f64,
    seed: u64,
    ledger: &mut QueryLedger,
    config: &EmulationConfig,
) -> Result<MeanEstimateDetail> {
    if !(eps_j > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps_j must be positive, got {eps_j}"
        )));
    }
    let d = data.d();
    let n = data.n();
    let k = centers0.k();
    let c0 = centers0.center(j);

    // exact first and second moments of X_j under p~
    let mut mu_acc: Vec<StableSum> = vec![StableSum::new(); d];
    for &i in assignment.members(j) {
        let pi = p_tilde.probs[i];
        if pi == 0.0 {
            continue;
        }
        for (acc, (x, c)) in mu_acc.iter_mut().zip(data.point(i).iter().zip(c0)) {
            acc.add(pi * (x - c));
        }
    }
    let mu_tilde: Vec<f64> = mu_acc.iter().map(StableSum::value).collect();

    let mu_norm_sq = sq_norm(&mu_tilde);
    let mut tr_acc = StableSum::new();
    for i in 0..n {
        let pi = p_tilde.probs[i];
        if pi == 0.0 {
            continue;
        }
        if assignment.label(i) == j {
            let mut dev = 0.0;
            for ((x, c), m) in data.point(i).iter().zip(c0).zip(&mu_tilde) {
                let t = (x - c) - m;
                dev += t * t;
            }
            tr_acc.add(pi * dev);
        } else {
            tr_acc.add(pi * mu_norm_sq);
        }
    }
    let trace = tr_acc.value().max(0.0);

    // query accounting
    let m_calls = (config.constants.mean_est * (d as f64).sqrt() / eps_j).ceil() as u64;
    let size_j = assignment.sizes()[j] as f64;
    let boost_uses =
        (config.constants.boost * (n as f64 / size_j).sqrt() * (1.0 / delta).ln()).ceil() as u64;
    let per_assignment = (k as u64) + 1;
    ledger.mean_estimation_oracle_calls += m_calls;
    ledger.boosting_queries += m_calls * boost_uses * per_assignment;
    ledger.cluster_assignment_queries += m_calls * per_assignment;
    ledger.rv_access_queries += m_calls * 2;

    if config.noiseless || trace == 0.0 {
        return Ok(MeanEstimateDetail {
            mu_hat: mu_tilde.clone(),
            mu_tilde,
            trace,
        });
    }

    let mut rng = rng_from(seed);
    let failure = rng.random::<f64>() < delta_fail;
    let u: f64 = rng.random();
    let dir = unit_sphere_direction(&mut rng, d);
    let blowup = if failure { config.failure_blowup } else { 1.0 };
    let radius = u * eps_j * trace.sqrt() * blowup;
    let mu_hat: Vec<f64> = mu_tilde
        .iter()
        .zip(&dir)
        .map(|(m, e)| m + radius * e)
        .collect();

    if !failure {
        let err = sq_dist(&mu_hat, &mu_tilde).sqrt();
        let budget = eps_j * trace.sqrt();
        assert!(
            err <= budget * (1.0 + 1e-9),
            "success draw violated the mean-estimation contract: {err} > {budget}"
        );
    }

    Ok(MeanEstimateDetail {
        mu_hat,
        mu_tilde,
        trace,
    })
}

/// Emulated quantum mean estimation for cluster `j` under the perturbed
/// distribution: the exact perturbed mean of `X_j(i) = (v_i - c_j^0) 1[l_i = j]`
/// plus noise of norm at most `eps_j sqrt(tr Sigma~)`, with an injected failure
/// (radius times `failure_blowup`) at probability `delta_fail`. Charges the
/// ledger `ceil(mean_est sqrt(d) / eps_j)` oracle calls and their boosting and
/// access queries; `delta` is the active perturbation budget entering the
/// boosting charge.
#[allow(clippy::too_many_arguments)]
pub fn quantum_mean_estimate(
    data: &DataSet,
    centers0: &Centers,
    assignment: &Assignment,
    j: usize,
    p_tilde: &ClusterDistribution,
    eps_j: f64,
    delta: f64,
    delta_fail: f64,
    seed: u64,
    ledger: &mut QueryLedger,
    config: &EmulationConfig,
) -> Result<Vec<f64>> {
    mean_estimate_detail(
        data, centers0, assignment, j, p_tilde, eps_j, delta, delta_fail, seed, ledger, config,
    )
    .map(|detail| detail.mu_hat)
}

/// Output of one emulated quantum k-means step.
#[derive(Debug, Clone)]
pub struct QuantumStepOutput {
    pub centers: Centers,
    pub ledger: QueryLedger,
    /// Per-cluster degenerate-schedule flags.
    pub degenerate: Vec<bool>,
}

/// One emulated iteration of the quantum uniform k-means step.
///
/// Per cluster: build the exact member distribution, perturb it with the
/// scheduled budget `Delta = min_j Delta_j`, estimate the shifted mean, and set
/// `c_j_hat = c_j^0 + mu_hat_j`. Per-cluster failure probability is
/// `delta_fail / k` so the union over clusters stays below `delta_fail`.
pub fn quantum_kmeans_step(
    data: &DataSet,
    centers0: &Centers,
    eps: f64,
    delta_fail: f64,
    config: &EmulationConfig,
    seed: u64,
) -> Result<QuantumStepOutput> {
    config.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    if !(delta_fail > 0.0 && delta_fail < 1.0) {
        return Err(Error::InvalidParameter("delta must lie in (0, 1)".into()));
    }
    let assignment = assign(data, centers0)?;
    if let Some(&j) = assignment.empty_clusters().first() {
        return Err(Error::EmptyCluster { cluster: j });
    }
    let diag = diagnostics(data, centers0)?;
    let k = centers0.k();
    let d = data.d();

    let schedule: Vec<EpsilonDelta> = (0..k)
        .map(|j| epsilon_j_delta(&diag, j, eps, delta_fail, d, k))
        .collect();
    let delta = schedule
        .iter()
        .map(|s| s.delta_j)
        .fold(f64::INFINITY, f64::min);
    let degenerate: Vec<bool> = schedule.iter().map(|s| s.degenerate).collect();

    // the noiseless hook must reproduce the Lloyd step bit for bit, so the
    // exact means are taken from the same accumulation path the Lloyd step
    // uses rather than from the c_j^0 + mu decomposition
    let exact_means = if config.noiseless {
        let labels = assignment.labels().to_vec();
        let (means, _, _) =
            crate::kmeans::means_with_fallback(data, 0..data.n(), |i| labels[i], centers0);
        Some(means)
    } else {
        None
    };

    let mut ledger = QueryLedger::default();
    let mut coords = Matrix::zeros(k, d);
    for j in 0..k {
        let exact = cluster_distribution(&assignment, j)?;
        let p_tilde = if config.noiseless {
            exact
        } else {
            perturbed_distribution(&exact, delta, config, derive_seed(seed, &[j as u64, 0]))
        };
        let detail = mean_estimate_detail(
            data,
            centers0,
            &assignment,
            j,
            &p_tilde,
            schedule[j].eps_j,
            delta,
            delta_fail / k as f64,
            derive_seed(seed, &[j as u64, 1]),
            &mut ledger,
            config,
        )?;
        // variance cap from the schedule; only guaranteed on the non-degenerate branch
        if !schedule[j].degenerate && delta <= schedule[j].delta_j * (1.0 + 1e-12) {
            let cap = 4.0 * diag.k_c * diag.phi_j[j];
            assert!(
                detail.trace <= cap * (1.0 + 1e-9) + 1e-30,
                "tr(Sigma~_{j}) = {} exceeds 4 k_C phi_j = {cap}",
                detail.trace
            );
        }
        match &exact_means {
            Some(means) => coords.row_mut(j).copy_from_slice(means.center(j)),
            None => {
                for ((o, c), m) in coords
                    .row_mut(j)
                    .iter_mut()
                    .zip(centers0.center(j))
                    .zip(&detail.mu_hat)
                {
                    *o = c + m;
                }
            }
        }
    }
    Ok(QuantumStepOutput {
        centers: Centers::new(coords)?,
        ledger,
        degenerate,
    })
}

/// The headline query bound with unit constants and no log factors:
/// `k^{3/2} k_C sqrt(d) (sqrt(phi)/eps + sqrt(d k / k_C))`. Report-only.
pub fn predicted_query_bound(diag: &Diagnostics, eps: f64, d: usize, k: usize) -> f64 {
    assert!(eps > 0.0, "eps must be positive");
    let kf = k as f64;
    let df = d as f64;
    kf.powf(1.5) * diag.k_c * df.sqrt() * (diag.phi.sqrt() / eps + (df * kf / diag.k_c).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::hard_instance;
    use crate::kmeans::lloyd_step;

    fn hard_assignment(n: usize, alpha: f64) -> (DataSet, Centers, Assignment) {
        let (data, centers) = hard_instance(n, alpha).unwrap();
        let a = assign(&data, &centers).unwrap();
        (data, centers, a)
    }

    #[test]
    fn cluster_distribution_examples() {
        let (_, _, a) = hard_assignment(4, 3.0);
        let p = cluster_distribution(&a, 0).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5, 0.0, 0.0]);
        let q = cluster_distribution(&a, 1).unwrap();
        assert_eq!(q.probs, vec![0.0, 0.0, 0.5, 0.5]);
        assert_eq!(stable_sum(p.probs.iter().copied()), 1.0);
    }

    #[test]
    fn cluster_distribution_singleton() {
        let data = DataSet::from_rows(&[vec![0.0], vec![10.0]]).unwrap();
        let c = Centers::from_rows(&[vec![0.0], vec![10.0]]).unwrap();
        let a = assign(&data, &c).unwrap();
        let p = cluster_distribution(&a, 1).unwrap();
        assert_eq!(p.probs, vec![0.0, 1.0]);
    }

    #[test]
    fn cluster_distribution_empty_cluster_error() {
        let data = DataSet::from_rows(&[vec![0.0], vec![0.1]]).unwrap();
        let c = Centers::from_rows(&[vec![0.0], vec![50.0]]).unwrap();
        let a = assign(&data, &c).unwrap();
        assert!(matches!(
            cluster_distribution(&a, 1),
            Err(Error::EmptyCluster { cluster: 1 })
        ));
    }

    #[test]
    fn perturbed_distribution_vanishing_delta() {
        let (_, _, a) = hard_assignment(4, 3.0);
        let p = cluster_distribution(&a, 0).unwrap();
        let config = EmulationConfig::default();
        let pt = perturbed_distribution(&p, 1e-30, &config, 5);
        for (a, b) in pt.probs.iter().zip(&p.probs) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn perturbed_distribution_closed_form() {
        let (_, _, a) = hard_assignment(4, 3.0);
        let p = cluster_distribution(&a, 0).unwrap();
        let config = EmulationConfig::default(); // worst-case, off-cluster
        let pt = perturbed_distribution(&p, 0.01, &config, 1);
        // off-cluster entries get Delta / (n - |C_0|) = 0.01 / 2
        assert!((pt.probs[2] - 0.005).abs() < 1e-15);
        assert!((pt.probs[3] - 0.005).abs() < 1e-15);
        assert!((pt.probs[0] - 0.495).abs() < 1e-15);
        let bound = 4.0 * 0.01f64.sqrt();
        for (x, y) in pt.probs.iter().zip(&p.probs) {
            assert!((x - y).abs() <= bound);
        }
    }

    #[test]
    fn perturbed_distribution_policies_hold_contracts() {
        let (_, _, a) = hard_assignment(8, 2.0);
        for j in 0..2 {
            let p = cluster_distribution(&a, j).unwrap();
            for dp in [DeltaPrimePolicy::WorstCase, DeltaPrimePolicy::UniformRandom] {
                for g in [
                    GarbagePolicy::OffClusterUniform,
                    GarbagePolicy::GlobalUniform,
                ] {
                    for seed in 0..20 {
                        let config = EmulationConfig {
                            delta_prime_policy: dp,
                            garbage_policy: g,
                            ..Default::default()
                        };
                        // sum and 4 sqrt(delta) asserts run inside
                        let _ = perturbed_distribution(&p, 0.2, &config, seed);
                    }
                }
            }
        }
    }

    #[test]
    fn perturbed_distribution_full_support_falls_back_to_global() {
        let data = DataSet::from_rows(&[vec![0.0], vec![0.1]]).unwrap();
        let c = Centers::from_rows(&[vec![0.0]]).unwrap();
        let a = assign(&data, &c).unwrap();
        let p = cluster_distribution(&a, 0).unwrap();
        let config = EmulationConfig::default();
        let pt = perturbed_distribution(&p, 0.1, &config, 3);
        // (1 - 0.1) * 0.5 + 0.1 * 0.5
        assert!((pt.probs[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn epsilon_j_direct_evaluation() {
        // engineered diagnostics: k_C = 2, phi_j = 1
        let diag = Diagnostics {
            phi: 1.0,
            phi_j: vec![1.0],
            k_c: 2.0,
            eta: 10.0,
            eta_bar: 5.0,
            eta_hat: 6.0,
            cost: 2.0,
            per_cluster_cost: vec![2.0],
            n: 100,
        };
        let s = epsilon_j_delta(&diag, 0, 0.3, 0.1, 2, 1);
        let first = 0.3 / (3.0 * 2.0f64.sqrt());
        let cap = (2.0f64 / 0.1).ln() / 2.0;
        assert!(first < cap);
        assert!((s.eps_j - first).abs() < 1e-15);
        assert!(!s.degenerate);
        let want_delta = first * first / (16.0 * 100.0f64.powi(2) * 4.0) * 0.25;
        assert!((s.delta_j - want_delta).abs() <= 1e-15 * want_delta);
    }

    #[test]
    fn epsilon_j_degenerate_branch() {
        let diag = Diagnostics {
            phi: 0.0,
            phi_j: vec![0.0, 0.5],
            k_c: 2.0,
            eta: 1.0,
            eta_bar: 1.0,
            eta_hat: 1.0,
            cost: 1.0,
            per_cluster_cost: vec![0.0, 1.0],
            n: 10,
        };
        let s = epsilon_j_delta(&diag, 0, 0.3, 0.1, 4, 2);
        let cap = (2.0f64 * 4.0 / 0.1).ln() / (8.0f64).sqrt();
        assert!((s.eps_j - cap).abs() < 1e-15);
        assert_eq!(s.delta_j, DELTA_FLOOR);
        assert!(s.degenerate);

        // the global Delta is the by-hand minimum over clusters
        let s1 = epsilon_j_delta(&diag, 1, 0.3, 0.1, 4, 2);
        assert!(!s1.degenerate);
        let global = s.delta_j.min(s1.delta_j);
        assert_eq!(global, DELTA_FLOOR.min(s1.delta_j));
    }

    #[test]
    fn eps_j_never_exceeds_log_cap() {
        let diag = Diagnostics {
            phi: 1e-8,
            phi_j: vec![1e-8],
            k_c: 1.5,
            eta: 1.0,
            eta_bar: 1.0,
            eta_hat: 1.0,
            cost: 1.0,
            per_cluster_cost: vec![1e-8],
            n: 50,
        };
        for eps in [1e-3, 0.1, 10.0, 1e6] {
            let s = epsilon_j_delta(&diag, 0, eps, 0.2, 7, 3);
            let cap = (3.0f64 * 7.0 / 0.2).ln() / (14.0f64).sqrt();
            assert!(s.eps_j <= cap * (1.0 + 1e-15));
        }
    }

    #[test]
    fn mean_estimate_zero_variance_is_exact() {
        let (data, centers, a) = hard_assignment(6, 2.0);
        let p = cluster_distribution(&a, 1).unwrap();
        let mut ledger = QueryLedger::default();
        let config = EmulationConfig::default();
        // exact p: all cluster-1 points sit at alpha = c_1^0, so X = 0 and trace = 0
        let mu = quantum_mean_estimate(
            &data,
            &centers,
            &a,
            1,
            &p,
            0.5,
            1e-6,
            0.1,
            9,
            &mut ledger,
            &config,
        )
        .unwrap();
        assert_eq!(mu, vec![0.0]);
        assert!(ledger.mean_estimation_oracle_calls > 0);
    }

    #[test]
    fn mean_estimate_rejects_nonpositive_eps() {
        let (data, centers, a) = hard_assignment(4, 2.0);
        let p = cluster_distribution(&a, 0).unwrap();
        let mut ledger = QueryLedger::default();
        let config = EmulationConfig::default();
        assert!(quantum_mean_estimate(
            &data,
            &centers,
            &a,
            0,
            &p,
            0.0,
            1e-6,
            0.1,
            1,
            &mut ledger,
            &config
        )
        .is_err());
    }

    #[test]
    fn mean_estimate_success_contract_and_target() {
        let (data, centers, a) = hard_assignment(10, 3.0);
        let p = cluster_distribution(&a, 0).unwrap();
        let config = EmulationConfig {
            failure_blowup: 1.0,
            ..Default::default()
        };
        for seed in 0..50 {
            let mut ledger = QueryLedger::default();
            let detail = mean_estimate_detail(
                &data,
                &centers,
                &a,
                0,
                &p,
                0.3,
                1e-8,
                0.0 + 1e-12,
                seed,
                &mut ledger,
                &config,
            )
            .unwrap();
            // mu under exact p is c_0 - c_0^0 = -1 - 0
            assert!((detail.mu_tilde[0] + 1.0).abs() < 1e-12);
            // trace under exact p: all members coincide with the mean
            assert!(detail.trace < 1e-12);
        }
    }

    #[test]
    fn exact_distribution_moments_match_theory() {
        // mu_j = c_j - c_j^0 and tr Sigma_j = (n / |C_j|) phi_j under exact p
        let data = DataSet::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.5, -0.5],
            vec![9.0, 9.0],
            vec![10.0, 8.0],
        ])
        .unwrap();
        let centers0 = Centers::from_rows(&[vec![0.0, 0.0], vec![9.0, 9.0]]).unwrap();
        let a = assign(&data, &centers0).unwrap();
        let diag = diagnostics(&data, &centers0).unwrap();
        let (lloyd, _) = lloyd_step(&data, &centers0).unwrap();
        let config = EmulationConfig::noiseless();
        for j in 0..2 {
            let p = cluster_distribution(&a, j).unwrap();
            let mut ledger = QueryLedger::default();
            let detail = mean_estimate_detail(
                &data,
                &centers0,
                &a,
                j,
                &p,
                0.2,
                1e-9,
                0.05,
                3,
                &mut ledger,
                &config,
            )
            .unwrap();
            for (m, (c1, c0)) in detail
                .mu_tilde
                .iter()
                .zip(lloyd.center(j).iter().zip(centers0.center(j)))
            {
                assert!((m - (c1 - c0)).abs() <= 1e-10);
            }
            let want_trace = data.n() as f64 / a.sizes()[j] as f64 * diag.phi_j[j];
            let scale = want_trace.max(1e-30);
            assert!((detail.trace - want_trace).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn quantum_step_noiseless_equals_lloyd() {
        let data = DataSet::from_rows(&[
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![8.0, 8.0],
            vec![9.0, 7.5],
            vec![-4.0, -4.0],
        ])
        .unwrap();
        let centers0 =
            Centers::from_rows(&[vec![0.0, 0.0], vec![8.0, 8.0], vec![-4.0, -4.0]]).unwrap();
        let (lloyd, _) = lloyd_step(&data, &centers0).unwrap();
        let out = quantum_kmeans_step(&data, &centers0, 0.1, 0.2, &EmulationConfig::noiseless(), 7)
            .unwrap();
        assert_eq!(out.centers, lloyd);
        assert_eq!(out.ledger.total(), out.ledger.total());
    }

    #[test]
    fn quantum_step_ledger_reproducible_and_additive() {
        let (data, centers0) = hard_instance(40, 2.0).unwrap();
        let config = EmulationConfig::default();
        let a = quantum_kmeans_step(&data, &centers0, 0.2, 0.2, &config, 11).unwrap();
        let b = quantum_kmeans_step(&data, &centers0, 0.2, 0.2, &config, 11).unwrap();
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.centers, b.centers);
        assert_eq!(
            a.ledger.total(),
            a.ledger.cluster_assignment_queries
                + a.ledger.boosting_queries
                + a.ledger.rv_access_queries
                + a.ledger.mean_estimation_oracle_calls
        );
        let mut merged = QueryLedger::default();
        merged.merge(&a.ledger);
        merged.merge(&b.ledger);
        assert_eq!(merged.total(), 2 * a.ledger.total());
    }

    #[test]
    fn quantum_step_hard_instance_alpha_cluster_stays_put() {
        // cluster 1 has zero spread: mu = 0 exactly, so c_1 stays at alpha
        let (data, centers0) = hard_instance(20, 3.0).unwrap();
        let out = quantum_kmeans_step(&data, &centers0, 0.1, 0.2, &EmulationConfig::default(), 13)
            .unwrap();
        assert!(
            out.degenerate.iter().all(|&f| f),
            "both clusters are zero-variance"
        );
        assert_eq!(out.centers.center(1), &[3.0]);
    }

    #[test]
    fn quantum_step_rejects_empty_cluster() {
        let data = DataSet::from_rows(&[vec![0.0], vec![0.1]]).unwrap();
        let c = Centers::from_rows(&[vec![0.0], vec![50.0]]).unwrap();
        assert!(matches!(
            quantum_kmeans_step(&data, &c, 0.1, 0.2, &EmulationConfig::default(), 1),
            Err(Error::EmptyCluster { cluster: 1 })
        ));
    }

    #[test]
    fn ledger_serializes_with_total() {
        let ledger = QueryLedger {
            cluster_assignment_queries: 10,
            boosting_queries: 50,
            rv_access_queries: 4,
            mean_estimation_oracle_calls: 2,
        };
        let v = serde_json::to_value(ledger).unwrap();
        assert_eq!(v["total"], 66);
        assert_eq!(v["boosting_queries"], 50);
    }

    #[test]
    fn predicted_bound_examples() {
        let diag = Diagnostics {
            phi: 1.0,
            phi_j: vec![1.0],
            k_c: 1.0,
            eta: 1.0,
            eta_bar: 1.0,
            eta_hat: 1.0,
            cost: 1.0,
            per_cluster_cost: vec![1.0],
            n: 10,
        };
        let b = predicted_query_bound(&diag, 0.1, 4, 1);
        assert!((b - 24.0).abs() < 1e-12);

        // monotone nonincreasing in eps
        let mut prev = f64::INFINITY;
        for eps in [0.01, 0.1, 1.0, 10.0, 1e3] {
            let v = predicted_query_bound(&diag, eps, 4, 1);
            assert!(v <= prev);
            prev = v;
        }

        // doubling phi scales the first term by sqrt(2)
        let mut diag2 = diag.clone();
        diag2.phi = 2.0;
        let base = 1.0f64; // k^{3/2} k_C sqrt(d) with these numbers: 1 * 1 * 2 -> folded below
        let _ = base;
        let tail = 1.0 * 1.0 * 2.0 * (4.0f64 * 1.0 / 1.0).sqrt();
        let first = predicted_query_bound(&diag, 0.1, 4, 1) - tail;
        let first2 = predicted_query_bound(&diag2, 0.1, 4, 1) - tail;
        assert!((first2 - 2.0f64.sqrt() * first).abs() < 1e-9);
    }
}
