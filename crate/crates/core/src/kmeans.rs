//! Exact assignment, the Lloyd step, cost functionals, and data-dependent
//! diagnostics.
//!
//! Cluster labels are 0-based throughout. Nearest-center ties are broken by
//! the lowest cluster index, and the same comparison is reused by every
//! sampling-based step in this crate so that exact and approximate updates
//! agree on partitions.

use serde::Serialize;

use crate::dataset::DataSet;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sq_dist, sq_norm, Matrix, StableSum};

/// An ordered list of k centers in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Centers {
    coords: Matrix,
}

impl Centers {
    pub fn new(coords: Matrix) -> Result<Self> {
        if coords.rows() == 0 || coords.cols() == 0 {
            return Err(Error::InvalidParameter(
                "centers need k >= 1 and d >= 1".into(),
            ));
        }
        if coords.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite entry in centers".into(),
            ));
        }
        Ok(Self { coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows))
    }

    pub fn k(&self) -> usize {
        self.coords.rows()
    }

    pub fn d(&self) -> usize {
        self.coords.cols()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        self.coords.row(j)
    }

    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    /// Concatenate the k centers into a single vector in R^{kd}.
    pub fn flatten(&self) -> Vec<f64> {
        self.coords.as_slice().to_vec()
    }

    pub fn from_flat(k: usize, d: usize, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != k * d {
            return Err(Error::DimensionMismatch(format!(
                "flat center vector has length {}, expected {k}*{d}",
                flat.len()
            )));
        }
        Self::new(Matrix::from_flat(k, d, flat))
    }
}

/// Partition of the data induced by a set of centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    labels: Vec<usize>,
    cluster_members: Vec<Vec<usize>>,
    cluster_sizes: Vec<usize>,
}

impl Assignment {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn members(&self, j: usize) -> &[usize] {
        &self.cluster_members[j]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn k(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn empty_clusters(&self) -> Vec<usize> {
        self.cluster_sizes
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Index of the nearest center, ties broken toward the lowest index.
#[inline]
pub fn nearest_center(centers: &Centers, v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = sq_dist(v, centers.center(0));
    for j in 1..centers.k() {
        let dj = sq_dist(v, centers.center(j));
        if dj < best_d {
            best = j;
            best_d = dj;
        }
    }
    best
}

fn check_dims(data: &DataSet, centers: &Centers) -> Result<()> {
    if data.d() != centers.d() {
        return Err(Error::DimensionMismatch(format!(
            "data is {}-dimensional, centers are {}-dimensional",
            data.d(),
            centers.d()
        )));
    }
    Ok(())
}

/// Assigns every point to its nearest center.
pub fn assign(data: &DataSet, centers: &Centers) -> Result<Assignment> {
    check_dims(data, centers)?;
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let k = centers.k();
    let labels: Vec<usize> = data
        .iter_points()
        .map(|v| nearest_center(centers, v))
        .collect();
    let mut cluster_members = vec![Vec::new(); k];
    let mut cluster_sizes = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        cluster_members[l].push(i);
        cluster_sizes[l] += 1;
    }
    Ok(Assignment {
        labels,
        cluster_members,
        cluster_sizes,
    })
}

/// Mean of the points selected by `indices` per label, accumulated in index
/// order. Labels come from `labels_of`. Clusters that receive no point keep
/// the fallback center. The mini-batch step reuses this with a sampled index
/// multiset, which makes the full-batch case bitwise equal to the Lloyd step.
pub(crate) fn means_with_fallback(
    data: &DataSet,
    indices: impl Iterator<Item = usize>,
    labels_of: impl Fn(usize) -> usize,
    fallback: &Centers,
) -> (Centers, Vec<usize>, Vec<usize>) {
    let k = fallback.k();
    let d = fallback.d();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for i in indices {
        let l = labels_of(i);
        counts[l] += 1;
        let row = sums.row_mut(l);
        for (acc, x) in row.iter_mut().zip(data.point(i)) {
            *acc += x;
        }
    }
    let mut empty = Vec::new();
    let mut out = Matrix::zeros(k, d);
    for j in 0..k {
        if counts[j] == 0 {
            empty.push(j);
            out.row_mut(j).copy_from_slice(fallback.center(j));
        } else {
            let c = counts[j] as f64;
            for (o, s) in out.row_mut(j).iter_mut().zip(sums.row(j)) {
                *o = s / c;
            }
        }
    }
    let centers = Centers::new(out).expect("means of finite points are finite");
    (centers, counts, empty)
}

/// One Lloyd iteration: partition by `centers0`, then recenter each cluster at
/// its mean. A cluster left empty by the partition keeps its initial center;
/// callers can detect this through [`Assignment::empty_clusters`].
pub fn lloyd_step(data: &DataSet, centers0: &Centers) -> Result<(Centers, Assignment)> {
    let assignment = assign(data, centers0)?;
    let labels = assignment.labels().to_vec();
    let (centers, _, _) = means_with_fallback(data, 0..data.n(), |i| labels[i], centers0);
    Ok((centers, assignment))
}

/// Mean over points of the squared distance to the nearest center.
pub fn cost(data: &DataSet, centers: &Centers) -> Result<f64> {
    check_dims(data, centers)?;
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut acc = StableSum::new();
    for v in data.iter_points() {
        let mut best = f64::INFINITY;
        for j in 0..centers.k() {
            best = best.min(sq_dist(v, centers.center(j)));
        }
        acc.add(best);
    }
    Ok(acc.value() / data.n() as f64)
}

/// Partition-quality and norm diagnostics for a (data, initial centers) pair.
///
/// `phi` and `phi_j` are measured against the Lloyd means of the induced
/// partition; `cost` and `per_cluster_cost` against the initial centers
/// themselves. Serializes to a flat JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub phi: f64,
    pub phi_j: Vec<f64>,
    #[serde(rename = "k_C")]
    pub k_c: f64,
    pub eta: f64,
    pub eta_bar: f64,
    pub eta_hat: f64,
    pub cost: f64,
    pub per_cluster_cost: Vec<f64>,
    #[serde(skip)]
    pub n: usize,
}

/// Computes every diagnostic for the partition induced by `centers0`.
/// Fails if any induced cluster is empty (the balance parameter is undefined
/// there).
pub fn diagnostics(data: &DataSet, centers0: &Centers) -> Result<Diagnostics> {
    let assignment = assign(data, centers0)?;
    if let Some(&j) = assignment.empty_clusters().first() {
        return Err(Error::EmptyCluster { cluster: j });
    }
    let labels = assignment.labels().to_vec();
    let (means, _, _) = means_with_fallback(data, 0..data.n(), |i| labels[i], centers0);

    let n = data.n() as f64;
    let k = centers0.k();

    let mut phi_j = vec![0.0; k];
    let mut per_cluster_cost = vec![0.0; k];
    for j in 0..k {
        let mut phi_acc = StableSum::new();
        let mut cost_acc = StableSum::new();
        for &i in assignment.members(j) {
            phi_acc.add(sq_dist(data.point(i), means.center(j)));
            cost_acc.add(sq_dist(data.point(i), centers0.center(j)));
        }
        phi_j[j] = phi_acc.value() / n;
        per_cluster_cost[j] = cost_acc.value() / n;
    }
    let phi = crate::linalg::stable_sum(phi_j.iter().copied());

    let min_size = *assignment.sizes().iter().min().expect("k >= 1");
    let k_c = n / min_size as f64;

    let mut eta = 0.0f64;
    let mut sq_acc = StableSum::new();
    let mut norm_acc = StableSum::new();
    for v in data.iter_points() {
        let s = sq_norm(v);
        eta = eta.max(s);
        sq_acc.add(s);
        norm_acc.add(s.sqrt());
    }
    let eta_bar = sq_acc.value() / n;
    let mean_norm = norm_acc.value() / n;
    let spec = spectral_norm(data.points());
    let eta_hat = mean_norm * mean_norm + spec * spec / n;

    let total_cost = cost(data, centers0)?;

    let diag = Diagnostics {
        phi,
        phi_j,
        k_c,
        eta,
        eta_bar,
        eta_hat,
        cost: total_cost,
        per_cluster_cost,
        n: data.n(),
    };

    // ordering chain; slack covers roundoff and the power-iteration tolerance
    let slack = 1.0 + 1e-6;
    assert!(
        diag.phi <= diag.eta_bar * slack + 1e-12,
        "phi <= eta_bar violated"
    );
    assert!(
        diag.eta_bar <= diag.eta * slack + 1e-12,
        "eta_bar <= eta violated"
    );
    assert!(
        diag.eta_hat <= 2.0 * diag.eta_bar * slack + 1e-12,
        "eta_hat <= 2 eta_bar violated"
    );
    assert!(
        2.0 * diag.eta_bar <= 2.0 * data.d() as f64 * diag.eta_hat * slack + 1e-12,
        "eta_bar <= d eta_hat violated"
    );
    Ok(diag)
}

/// Max and cluster-size-weighted distances between two center sets:
/// `max_j ||c_j - c'_j||` and `(1/n) sum_j sizes_j ||c_j - c'_j||^2`.
pub fn center_error(
    reference: &Centers,
    approx: &Centers,
    sizes: &[usize],
    n: usize,
) -> Result<(f64, f64)> {
    if reference.k() != approx.k() || reference.d() != approx.d() {
        return Err(Error::DimensionMismatch(format!(
            "center sets are {}x{} vs {}x{}",
            reference.k(),
            reference.d(),
            approx.k(),
            approx.d()
        )));
    }
    if sizes.len() != reference.k() {
        return Err(Error::DimensionMismatch(format!(
            "sizes has length {}, expected {}",
            sizes.len(),
            reference.k()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut max_err: f64 = 0.0;
    let mut weighted = StableSum::new();
    for j in 0..reference.k() {
        let sq = sq_dist(reference.center(j), approx.center(j));
        max_err = max_err.max(sq.sqrt());
        weighted.add(sizes[j] as f64 * sq);
    }
    Ok((max_err, weighted.value() / n as f64))
}
