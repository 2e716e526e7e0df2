//! Gram matrices for the kernelized basis-function model.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DrcsError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec<T> {
    /// `exp(-||x - x'||^2 / bandwidth)`
    Rbf { bandwidth: T },
    Linear,
    /// Gram supplied externally; there is no feature map to evaluate.
    Precomputed,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn rbf(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite_value() {
            return Err(DrcsError::InvalidArgument(format!("rbf bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KernelSpec::Rbf { bandwidth })
    }

    fn eval(&self, a: &[T], b: &[T]) -> T {
        match *self {
            KernelSpec::Rbf { bandwidth } => {
                let sq = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).fold(T::zero(), |s, t| s + t);
                (-sq / bandwidth).exp()
            }
            KernelSpec::Linear => a.iter().zip(b).map(|(&x, &y)| x * y).fold(T::zero(), |s, t| s + t),
            KernelSpec::Precomputed => unreachable!("checked by callers"),
        }
    }
}

/// `d' * Var(X)` over the non-intercept entries (last column is the intercept),
/// with the pooled population variance of all those entries.
pub fn bandwidth_heuristic<T: Scalar>(x: &DMatrix<T>) -> Result<T> {
    if x.nrows() == 0 || x.ncols() < 2 {
        return Err(DrcsError::InvalidData("need at least one non-intercept feature and one row".into()));
    }
    let d_prime = x.ncols() - 1;
    let body = x.columns(0, d_prime);
    let count = T::from_usize_lossy(body.len());
    let mean = body.iter().fold(T::zero(), |s, &v| s + v) / count;
    let var = body.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |s, t| s + t) / count;
    if !(var > T::zero()) {
        return Err(DrcsError::InvalidData("features have zero variance".into()));
    }
    Ok(T::from_usize_lossy(d_prime) * var)
}

fn rows_of<T: Scalar>(x: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// Cross-Gram `K[i, j] = k(x1_i, x2_j)`.
///
/// Squared distances are accumulated coordinate-wise, so identical rows give
/// exactly zero and `gram(a, b) == gram(b, a)^T` bit for bit.
pub fn gram<T: Scalar>(x1: &DMatrix<T>, x2: &DMatrix<T>, spec: &KernelSpec<T>) -> Result<DMatrix<T>> {
    if matches!(spec, KernelSpec::Precomputed) {
        return Err(DrcsError::InvalidArgument("a precomputed kernel cannot be evaluated on features".into()));
    }
    if x1.ncols() != x2.ncols() {
        return Err(DrcsError::DimensionMismatch(format!("{} vs {} columns", x1.ncols(), x2.ncols())));
    }
    let r1 = rows_of(x1);
    let r2 = rows_of(x2);
    let rows: Vec<Vec<T>> = r1.par_iter().map(|a| r2.iter().map(|b| spec.eval(a, b)).collect()).collect();
    Ok(DMatrix::from_fn(x1.nrows(), x2.nrows(), |i, j| rows[i][j]))
}

/// `k(x_i, x_i)` for every row.
pub fn gram_diag<T: Scalar>(x: &DMatrix<T>, spec: &KernelSpec<T>) -> Result<DVector<T>> {
    if matches!(spec, KernelSpec::Precomputed) {
        return Err(DrcsError::InvalidArgument("a precomputed kernel cannot be evaluated on features".into()));
    }
    let rows = rows_of(x);
    Ok(DVector::from_iterator(rows.len(), rows.iter().map(|r| spec.eval(r, r))))
}

/// Reads a header-free, row-major square matrix from comma-separated text.
pub fn parse_precomputed_csv<T: Scalar>(text: &str) -> Result<DMatrix<T>> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map(T::lit).map_err(|_| DrcsError::Parse {
                    line: lineno + 1,
                    message: format!("non-numeric kernel entry `{}`", tok.trim()),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(DrcsError::Empty("kernel matrix".into()));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(DrcsError::DimensionMismatch(format!("row {} has {} entries, expected {n}", i + 1, r.len())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn load_precomputed_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<DMatrix<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DrcsError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_precomputed_csv(&text)
}
