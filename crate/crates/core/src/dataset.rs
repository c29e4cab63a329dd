//! Data ingestion, synthetic generation, and transformations.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kmeans::Centers;
use crate::linalg::{dist, orthonormalize_columns, sq_norm, Matrix};
use crate::seeding::rng_from;

/// An n×d point set. Construction validates that every entry is finite and
/// that both dimensions are at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    points: Matrix,
}

impl DataSet {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if points.cols() == 0 {
            return Err(Error::InvalidParameter(
                "points need at least one coordinate".into(),
            ));
        }
        if points.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite entry in dataset".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows))
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn d(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter_rows()
    }

    /// Squared Euclidean norm of every row.
    pub fn row_sq_norms(&self) -> Vec<f64> {
        self.iter_points().map(sq_norm).collect()
    }
}

/// Rotation plus shift. The rotation must be orthogonal: `R^T R = I` within
/// 1e-10 per entry, checked at construction.
#[derive(Debug, Clone)]
pub struct RigidTransform {
    rotation: Matrix,
    shift: Vec<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix, shift: Vec<f64>) -> Result<Self> {
        let d = rotation.rows();
        if rotation.cols() != d {
            return Err(Error::DimensionMismatch(format!(
                "rotation is {}x{}, must be square",
                rotation.rows(),
                rotation.cols()
            )));
        }
        if shift.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "shift has length {}, rotation is {d}x{d}",
                shift.len()
            )));
        }
        for p in 0..d {
            for q in 0..d {
                let mut dot = 0.0;
                for i in 0..d {
                    dot += rotation.get(i, p) * rotation.get(i, q);
                }
                let want = if p == q { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-10 {
                    return Err(Error::InvalidParameter(format!(
                        "rotation is not orthogonal: (R^T R)[{p},{q}] = {dot}"
                    )));
                }
            }
        }
        Ok(Self { rotation, shift })
    }

    pub fn identity(d: usize) -> Self {
        let mut rotation = Matrix::zeros(d, d);
        for i in 0..d {
            rotation.set(i, i, 1.0);
        }
        Self {
            rotation,
            shift: vec![0.0; d],
        }
    }

    pub fn translation(shift: Vec<f64>) -> Self {
        let mut t = Self::identity(shift.len());
        t.shift = shift;
        t
    }

    /// Haar-like random rotation (QR of a Gaussian matrix, diagonal sign fixed)
    /// with a Gaussian shift, deterministic per seed.
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut rotation = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                rotation.set(i, j, rng.sample::<f64, _>(StandardNormal));
            }
        }
        orthonormalize_columns(&mut rotation);
        let shift = (0..d)
            .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { rotation, shift }
    }

    pub fn d(&self) -> usize {
        self.shift.len()
    }

    pub fn rotation(&self) -> &Matrix {
        &self.rotation
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    /// `R v + s` for a single point.
    pub fn apply_point(&self, v: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = self.shift.clone();
        for p in 0..d {
            let mut acc = 0.0;
            for q in 0..d {
                acc += self.rotation.get(p, q) * v[q];
            }
            out[p] += acc;
        }
        out
    }
}

/// Parameters of an axis-aligned Gaussian mixture with equal cluster sizes.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub k: usize,
    pub means: Vec<Vec<f64>>,
    /// Per-cluster standard deviation, all strictly positive.
    pub stds: Vec<f64>,
    pub points_per_cluster: usize,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.means.len() != self.k {
            return Err(Error::InvalidParameter(format!(
                "expected {} means, found {}",
                self.k,
                self.means.len()
            )));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidParameter(
                "means must share a positive dimension".into(),
            ));
        }
        if self.stds.len() != self.k || self.stds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter(
                "need one std > 0 per cluster".into(),
            ));
        }
        if self.points_per_cluster == 0 {
            return Err(Error::InvalidParameter(
                "points_per_cluster must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Means drawn uniformly from `[-spread, spread]^d`, constant std.
    pub fn with_random_means(
        k: usize,
        d: usize,
        std: f64,
        points_per_cluster: usize,
        spread: f64,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::InvalidParameter("k and d must be positive".into()));
        }
        let mut rng = rng_from(seed);
        let means = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-spread..=spread)).collect())
            .collect();
        let spec = Self {
            k,
            means,
            stds: vec![std; k],
            points_per_cluster,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Reads a CSV file of numeric rows into a dataset. One point per row, comma
/// separated, `.` decimal. Row numbers in errors are 1-based file lines
/// (including the header line when present).
pub fn load_csv(path: &Path, has_header: bool) -> Result<DataSet> {
    let mut file = std::fs::File::open(path)?;
    let mut text = String::new();
    file.read_to_string(&mut text)?;
    parse_csv(&text, has_header)
}

/// CSV parsing backend for [`load_csv`]; exposed so callers can ingest
/// in-memory buffers.
pub fn parse_csv(text: &str, has_header: bool) -> Result<DataSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::CsvParse {
            row: line,
            msg: e.to_string(),
        })?;
        if has_header && idx == 0 {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            // blank line
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if record.len() != w => {
                return Err(Error::CsvParse {
                    row: line,
                    msg: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::CsvParse {
                row: line,
                msg: format!("non-numeric field '{field}'"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::CsvParse {
            row: 1,
            msg: "no data rows".into(),
        });
    }
    DataSet::from_rows(&rows)
}

/// Writes points as plain numeric CSV, one point per row, no header.
pub fn write_csv<W: Write>(writer: W, points: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for i in 0..points.rows() {
        let fields: Vec<String> = points.row(i).iter().map(|v| format!("{v}")).collect();
        w.write_record(&fields).map_err(|e| Error::CsvParse {
            row: i + 1,
            msg: e.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_path(path: &Path, points: &Matrix) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(file, points)
}

/// Draws `k * points_per_cluster` points, cluster-major, and returns the true
/// means as centers. Deterministic per seed.
pub fn generate_gaussian_mixture(spec: &MixtureSpec, seed: u64) -> Result<(DataSet, Centers)> {
    spec.validate()?;
    let d = spec.means[0].len();
    let n = spec.k * spec.points_per_cluster;
    let mut rng = rng_from(seed);
    let mut points = Matrix::zeros(n, d);
    let mut row = 0;
    for (mean, &std) in spec.means.iter().zip(&spec.stds) {
        for _ in 0..spec.points_per_cluster {
            let out = points.row_mut(row);
            for (o, &m) in out.iter_mut().zip(mean) {
                let z: f64 = rng.sample(StandardNormal);
                *o = m + std * z;
            }
            row += 1;
        }
    }
    let centers = Centers::from_rows(&spec.means)?;
    Ok((DataSet::new(points)?, centers))
}

/// Maps every point through `R v + s`. Pairwise distances are preserved up to
/// roundoff because `R` is orthogonal.
pub fn apply_rigid_transform(data: &DataSet, t: &RigidTransform) -> Result<DataSet> {
    if t.d() != data.d() {
        return Err(Error::DimensionMismatch(format!(
            "transform is {}-dimensional, data is {}-dimensional",
            t.d(),
            data.d()
        )));
    }
    let mut points = Matrix::zeros(data.n(), data.d());
    for i in 0..data.n() {
        let mapped = t.apply_point(data.point(i));
        points.row_mut(i).copy_from_slice(&mapped);
    }
    DataSet::new(points)
}

/// Gaussian Johnson–Lindenstrauss projection to `target_dim` coordinates.
///
/// The projection matrix has i.i.d. N(0, 1/target_dim) entries so squared
/// norms are preserved in expectation. Deterministic per seed.
pub fn jl_project(data: &DataSet, target_dim: usize, seed: u64) -> Result<DataSet> {
    if target_dim == 0 {
        return Err(Error::InvalidParameter(
            "target_dim must be positive".into(),
        ));
    }
    let d = data.d();
    let scale = 1.0 / (target_dim as f64).sqrt();
    let mut rng = rng_from(seed);
    let mut proj = Matrix::zeros(d, target_dim);
    for i in 0..d {
        for j in 0..target_dim {
            proj.set(i, j, scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
    DataSet::new(data.points().matmul(&proj))
}

/// The two-cluster line instance: n/2 points at -1, n/2 at `alpha`, with
/// initial centers (0, alpha). Perfectly clusterable, yet adversarial for
/// norm-weighted sampling once `alpha` is large.
pub fn hard_instance(n: usize, alpha: f64) -> Result<(DataSet, Centers)> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "n must be even and positive, got {n}"
        )));
    }
    if !(alpha >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be >= 1, got {alpha}"
        )));
    }
    let mut points = Matrix::zeros(n, 1);
    for i in 0..n / 2 {
        points.set(i, 0, -1.0);
    }
    for i in n / 2..n {
        points.set(i, 0, alpha);
    }
    let centers = Centers::from_rows(&[vec![0.0], vec![alpha]])?;
    Ok((DataSet::new(points)?, centers))
}

/// Max pairwise-distance proxy: twice the largest distance to the mean.
pub fn diameter_upper_bound(data: &DataSet) -> f64 {
    let d = data.d();
    let mut mean = vec![0.0; d];
    for p in data.iter_points() {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= data.n() as f64;
    }
    let r = data
        .iter_points()
        .map(|p| dist(p, &mean))
        .fold(0.0f64, f64::max);
    2.0 * r
}
