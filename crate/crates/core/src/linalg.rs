//! Small dense helpers shared across modules.
//!
//! Matrix-valued quantities (linear maps `U -> V`, tensors in `U ⊗ V`) are
//! flattened row-major whenever they are carried as vectors: entry `(i, j)` of
//! an `r × c` matrix sits at index `i * c + j`.

use nalgebra::{DMatrix, DVector};

/// `a ⊗ b` as the matrix `a bᵀ`.
pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

/// `m += a ⊗ b`, without allocating.
pub fn add_outer(m: &mut DMatrix<f64>, a: &[f64], b: &[f64]) {
    debug_assert_eq!(m.nrows(), a.len());
    debug_assert_eq!(m.ncols(), b.len());
    for (j, &bj) in b.iter().enumerate() {
        for (i, &ai) in a.iter().enumerate() {
            m[(i, j)] += ai * bj;
        }
    }
}

pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |k, _| m[(k / c, k % c)])
}

pub fn unflatten(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), rows * cols);
    DMatrix::from_row_slice(rows, cols, v)
}

/// Euclidean distance between two equally sized slices.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Neumaier-compensated running sum of vectors.
#[derive(Clone, Debug)]
pub struct CompensatedSum {
    sum: DVector<f64>,
    comp: DVector<f64>,
}

impl CompensatedSum {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: DVector::zeros(dim),
            comp: DVector::zeros(dim),
        }
    }

    pub fn add(&mut self, x: &DVector<f64>) {
        for k in 0..self.sum.len() {
            let s = self.sum[k];
            let t = s + x[k];
            if s.abs() >= x[k].abs() {
                self.comp[k] += (s - t) + x[k];
            } else {
                self.comp[k] += (x[k] - t) + s;
            }
            self.sum[k] = t;
        }
    }

    pub fn value(&self) -> DVector<f64> {
        &self.sum + &self.comp
    }
}
