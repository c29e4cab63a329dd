//! Small dense-matrix helpers shared across the crate.
//!
//! Everything here is deliberately plain: row-major `f64` storage, compensated
//! summation for the accumulations that feed exact-identity checks, and a power
//! iteration for the spectral norm. The problem sizes in this crate (d up to a
//! few tens, n up to ~10^5) do not justify a linear algebra dependency.

use serde::Serialize;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    /// Build from a flat row-major buffer. Panics if the length is not `rows * cols`.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "flat buffer has wrong length");
        Self { data, rows, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            data,
            rows: r,
            cols: c,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// `self * other`, (r×c)·(c×m).
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(l, j);
                }
            }
        }
        out
    }
}

/// Neumaier-compensated accumulator.
///
/// The exact-identity contracts in this crate (partition cost decompositions,
/// bias–variance splits) are asserted at 1e-10 relative tolerance, which naive
/// summation does not reliably meet once terms cancel.
#[derive(Debug, Clone, Copy, Default)]
pub struct StableSum {
    sum: f64,
    comp: f64,
}

impl StableSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn stable_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = StableSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

#[inline]
pub fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Spectral norm (largest singular value) of an n×d matrix.
///
/// Power iteration on the d×d Gram matrix, relative tolerance 1e-8 on the
/// Rayleigh quotient, at most 1000 iterations. Deterministic start vector.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let d = m.cols();
    if d == 0 || m.rows() == 0 {
        return 0.0;
    }
    // Gram accumulation is the only O(n d^2) pass; compensation keeps the
    // downstream eta ordering checks honest.
    let mut gram = Matrix::zeros(d, d);
    for p in 0..d {
        for q in p..d {
            let mut acc = StableSum::new();
            for i in 0..m.rows() {
                let r = m.row(i);
                acc.add(r[p] * r[q]);
            }
            let v = acc.value();
            gram.set(p, q, v);
            gram.set(q, p, v);
        }
    }

    let mut v: Vec<f64> = (0..d)
        .map(|i| {
            let h = crate::seeding::splitmix64(0x9e37_79b9 ^ (i as u64));
            // map to (0, 1]; any fixed nonzero vector works
            (h >> 11) as f64 / (1u64 << 53) as f64 + 1e-3
        })
        .collect();
    let norm = sq_norm(&v).sqrt();
    for x in &mut v {
        *x /= norm;
    }

    let mut lambda = 0.0f64;
    for _ in 0..1000 {
        let mut w = vec![0.0; d];
        for p in 0..d {
            let mut s = 0.0;
            for q in 0..d {
                s += gram.get(p, q) * v[q];
            }
            w[p] = s;
        }
        let wn = sq_norm(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        for x in &mut w {
            *x /= wn;
        }
        let new_lambda = wn;
        let done = (new_lambda - lambda).abs() <= 1e-8 * new_lambda.max(f64::MIN_POSITIVE);
        lambda = new_lambda;
        v = w;
        if done {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Orthonormalize the columns of a square matrix in place (modified
/// Gram–Schmidt, two passes) and fix signs so the implied R has a positive
/// diagonal. Input columns must be linearly independent.
pub fn orthonormalize_columns(m: &mut Matrix) {
    let d = m.rows();
    assert_eq!(d, m.cols(), "rotation factors are square");
    for j in 0..d {
        let mut col: Vec<f64> = (0..d).map(|i| m.get(i, j)).collect();
        for _pass in 0..2 {
            for p in 0..j {
                let mut dot = 0.0;
                for i in 0..d {
                    dot += m.get(i, p) * col[i];
                }
                for i in 0..d {
                    col[i] -= dot * m.get(i, p);
                }
            }
        }
        let norm = sq_norm(&col).sqrt();
        assert!(norm > 0.0, "degenerate column in rotation sampling");
        // sign convention: diagonal of R nonnegative
        let sign = if col[j] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            m.set(i, j, sign * col[i] / norm);
        }
    }
}
