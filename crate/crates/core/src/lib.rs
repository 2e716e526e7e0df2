//! Coreset selection for kernel classifiers with a certified bound on the
//! worst-case weighted classification error over a ball of instance weights.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix it to `f64`, which is what the command-line tool uses.

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bound;
pub mod data;
pub mod erm;
pub mod error;
pub mod kernel;
pub mod scalar;
pub mod select;

pub use bound::{
    certify, certify_scores, maximize_on_ball, min_weighted_indicator, quadratic_form, radius, score_interval,
    worst_case_error_ub, worst_case_error_ub_from_count, BallMax, BoundReport, CertCounts, Certificate,
    QuadraticGapForm, ScoreInterval, ValidationScores,
};
pub use data::{cv_split, load_libsvm, parse_libsvm, shift_radius, Dataset, SplitPlan, WeightBall};
pub use erm::{evaluate_gap, objectives_at, rkhs_distance, train, train_full, LossKind, Model, Objectives, TrainOptions};
pub use error::{DrcsError, Result};
pub use kernel::{bandwidth_heuristic, gram, gram_diag, load_precomputed_csv, KernelSpec};
pub use scalar::Scalar;
pub use select::{
    baseline_select, greedy_exact, greedy_fixed_w, greedy_oneshot, Baseline, CoresetVector, Criterion, GreedyProblem,
    SelectionTrace, StepRecord,
};

pub type Dataset64 = Dataset<f64>;
pub type Model64 = Model<f64>;
pub type KernelSpec64 = KernelSpec<f64>;
pub type QuadraticGapForm64 = QuadraticGapForm<f64>;
pub type BoundReport64 = BoundReport<f64>;
pub type SelectionTrace64 = SelectionTrace<f64>;
