//! Dataset ingestion (LIBSVM text), cross-validation splits and weight balls.
//!
//! Every [`Dataset`] carries a trailing constant-one intercept column, so `d`
//! always counts the intercept. Sparse input is densified on load.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DrcsError, Result};
use crate::scalar::Scalar;

/// Membership tolerance for [`WeightBall::contains`].
pub const BALL_TOLERANCE: f64 = 1e-12;

const MAX_SPLIT_ATTEMPTS: usize = 100;

/// Labeled feature matrix with labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    /// n x d, last column is the intercept (all ones).
    pub features: DMatrix<T>,
    pub labels: Vec<i8>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from raw features (without intercept); the intercept
    /// column is appended here.
    pub fn new(raw: DMatrix<T>, labels: Vec<i8>) -> Result<Self> {
        if raw.nrows() != labels.len() {
            return Err(DrcsError::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                raw.nrows(),
                labels.len()
            )));
        }
        let n = raw.nrows();
        let d = raw.ncols() + 1;
        let mut features = DMatrix::from_element(n, d, T::one());
        features.view_mut((0, 0), (n, d - 1)).copy_from(&raw);
        Self::with_intercept(features, labels)
    }

    /// Wraps a matrix whose last column already is the intercept.
    pub fn with_intercept(features: DMatrix<T>, labels: Vec<i8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(DrcsError::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(DrcsError::InvalidData("no intercept column".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(DrcsError::InvalidData(format!("label {bad} is not -1 or +1")));
        }
        if features.iter().any(|x| !x.is_finite_value()) {
            return Err(DrcsError::InvalidData("non-finite feature value".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Feature count including the intercept.
    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_plus(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.n_plus();
        p > 0 && p < self.n()
    }

    pub fn label_vector(&self) -> DVector<T> {
        DVector::from_iterator(self.n(), self.labels.iter().map(|&y| label_scalar::<T>(y)))
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let features = self.features.select_rows(idx.iter());
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self { features, labels }
    }

    /// Rescales every non-intercept column to [-1, 1]; constant columns become 0.
    pub fn min_max_scaled(&self) -> Self {
        let mut out = self.clone();
        let d = self.d();
        for j in 0..d.saturating_sub(1) {
            let col = self.features.column(j);
            let lo = col.min();
            let hi = col.max();
            let span = hi - lo;
            for i in 0..self.n() {
                out.features[(i, j)] = if span > T::zero() {
                    T::lit(2.0) * (self.features[(i, j)] - lo) / span - T::one()
                } else {
                    T::zero()
                };
            }
        }
        out
    }

    /// Serializes to LIBSVM text. The intercept is not written; the last
    /// feature is always written so the column count survives a round trip.
    pub fn to_libsvm(&self) -> String {
        let mut s = String::new();
        let width = self.d() - 1;
        for i in 0..self.n() {
            s.push_str(if self.labels[i] > 0 { "+1" } else { "-1" });
            for j in 0..width {
                let x = self.features[(i, j)];
                let positive_zero = x == T::zero() && x.is_sign_positive();
                if positive_zero && j + 1 != width {
                    continue;
                }
                let _ = write!(s, " {}:{}", j + 1, x);
            }
            s.push('\n');
        }
        s
    }
}

#[inline]
pub(crate) fn label_scalar<T: Scalar>(y: i8) -> T {
    if y > 0 {
        T::one()
    } else {
        -T::one()
    }
}

/// Parses LIBSVM text into a dense dataset with an appended intercept.
///
/// Labels are binarized: data already in {-1, +1} is kept, otherwise the
/// numerically smaller of the two raw labels maps to -1.
pub fn parse_libsvm<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let mut raw_labels: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok.parse().map_err(|_| DrcsError::Parse {
            line: line_no,
            message: format!("invalid label `{label_tok}`"),
        })?;
        if !label.is_finite() {
            return Err(DrcsError::Parse { line: line_no, message: "non-finite label".into() });
        }
        let mut entries = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| DrcsError::Parse {
                line: line_no,
                message: format!("malformed token `{tok}`"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| DrcsError::Parse {
                line: line_no,
                message: format!("invalid index `{idx_s}`"),
            })?;
            if idx == 0 {
                return Err(DrcsError::Parse { line: line_no, message: "indices are 1-based".into() });
            }
            if idx == prev {
                return Err(DrcsError::Parse { line: line_no, message: format!("duplicate index {idx}") });
            }
            if idx < prev {
                return Err(DrcsError::Parse {
                    line: line_no,
                    message: format!("index {idx} after {prev}: indices not increasing"),
                });
            }
            let val: f64 = val_s.parse().map_err(|_| DrcsError::Parse {
                line: line_no,
                message: format!("non-numeric value `{val_s}`"),
            })?;
            if !val.is_finite() {
                return Err(DrcsError::Parse { line: line_no, message: format!("non-finite value `{val_s}`") });
            }
            prev = idx;
            entries.push((idx, val));
        }
        max_index = max_index.max(prev);
        raw_labels.push(label);
        rows.push(entries);
    }

    if rows.is_empty() {
        return Err(DrcsError::Empty("no instances in LIBSVM input".into()));
    }

    let labels = binarize(&raw_labels)?;
    let n = rows.len();
    let d = max_index + 1;
    let mut features = DMatrix::<T>::zeros(n, d);
    for (i, entries) in rows.iter().enumerate() {
        for &(idx, val) in entries {
            features[(i, idx - 1)] = T::lit(val);
        }
        features[(i, d - 1)] = T::one();
    }
    Dataset::with_intercept(features, labels)
}

fn binarize(raw: &[f64]) -> Result<Vec<i8>> {
    let mut distinct: Vec<f64> = raw.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    if distinct.iter().all(|&v| v == 1.0 || v == -1.0) {
        return Ok(raw.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect());
    }
    match distinct.as_slice() {
        [only] => {
            let y = if *only > 0.0 { 1 } else { -1 };
            Ok(vec![y; raw.len()])
        }
        [low, _high] => Ok(raw.iter().map(|&v| if v == *low { -1 } else { 1 }).collect()),
        _ => Err(DrcsError::InvalidData(format!(
            "{} distinct labels; only binary tasks are supported",
            distinct.len()
        ))),
    }
}

pub fn load_libsvm<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DrcsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_libsvm(&text)
}

/// L2 ball of weight vectors around the all-ones vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBall<T> {
    pub radius: T,
    pub dim: usize,
}

impl<T: Scalar> WeightBall<T> {
    pub fn new(radius: T, dim: usize) -> Result<Self> {
        if radius < T::zero() || !radius.is_finite_value() {
            return Err(DrcsError::InvalidArgument(format!("ball radius {radius} must be finite and >= 0")));
        }
        Ok(Self { radius, dim })
    }

    pub fn contains(&self, w: &DVector<T>) -> bool {
        if w.len() != self.dim {
            return false;
        }
        let dist = w.iter().map(|&x| (x - T::one()) * (x - T::one())).fold(T::zero(), |a, b| a + b).sqrt();
        dist <= self.radius + T::lit(BALL_TOLERANCE)
    }
}

/// Shift radius for a ball whose positive-class weights move from 1 to `a`.
pub fn shift_radius<T: Scalar>(n_plus: usize, a: T) -> T {
    T::from_usize_lossy(n_plus).sqrt() * (a - T::one()).abs()
}

/// Assignment of every instance to one validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_of: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl SplitPlan {
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Shuffled k-fold split (default k = 5, i.e. a 4:1 train/validation ratio).
///
/// Reshuffles until every training portion contains both classes.
pub fn cv_split<T: Scalar>(ds: &Dataset<T>, folds: usize, seed: u64) -> Result<SplitPlan> {
    if folds < 2 {
        return Err(DrcsError::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let n = ds.n();
    if n < folds {
        return Err(DrcsError::InvalidArgument(format!("{n} instances cannot fill {folds} folds")));
    }
    let total_pos = ds.n_plus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        perm.shuffle(&mut rng);
        let mut fold_of = vec![0usize; n];
        for (pos, &i) in perm.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
        let ok = (0..folds).all(|k| {
            let (mut val_n, mut val_pos) = (0usize, 0usize);
            for (&f, &y) in fold_of.iter().zip(&ds.labels) {
                if f == k {
                    val_n += 1;
                    val_pos += usize::from(y == 1);
                }
            }
            let train_pos = total_pos - val_pos;
            let train_n = n - val_n;
            train_pos > 0 && train_pos < train_n
        });
        if ok {
            return Ok(SplitPlan { fold_of, folds, seed });
        }
    }
    Err(DrcsError::DegenerateSplit { attempts: MAX_SPLIT_ATTEMPTS })
}
