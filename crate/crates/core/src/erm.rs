//! Weighted L2-regularized kernel ERM and its Fenchel dual.
//!
//! For a coreset mask `v`, weights `w`, `u = v * w` and `E = sum(u)`:
//!
//! ```text
//! P(beta)  = (1/E) sum_i u_i loss(y_i, beta^T phi(x_i)) + (lambda/2) ||beta||^2
//! D(alpha) = -(1/E) sum_i u_i loss*(-alpha_i) - 1/(2 lambda E^2) ||sum_i u_i y_i alpha_i phi(x_i)||^2
//! ```
//!
//! and the primal point recovered from `alpha` is
//! `beta = 1/(lambda E) sum_i u_i y_i alpha_i phi(x_i)`. Everything is kept in
//! kernel form through the coefficient vector of that expansion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::label_scalar;
use crate::error::{DrcsError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `log(1 + exp(-y f))`
    Logistic,
    /// `max(0, 1 - y f)`
    Hinge,
}

impl std::str::FromStr for LossKind {
    type Err = DrcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LossKind::Logistic),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(DrcsError::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Scalar>(s: T) -> T {
    if s >= T::zero() {
        T::one() / (T::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn xlogx<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x * x.ln()
    } else {
        T::zero()
    }
}

/// Loss value `loss(y, score)`.
pub fn loss_eval<T: Scalar>(kind: LossKind, y: T, score: T) -> T {
    let margin = y * score;
    match kind {
        LossKind::Logistic => softplus(-margin),
        LossKind::Hinge => (T::one() - margin).max(T::zero()),
    }
}

/// Convex conjugate evaluated at `-alpha`, i.e. `loss*(-alpha)`; `None` outside `[0, 1]`.
pub fn conjugate_eval<T: Scalar>(kind: LossKind, alpha: T) -> Option<T> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return None;
    }
    Some(match kind {
        LossKind::Logistic => xlogx(alpha) + xlogx(T::one() - alpha),
        LossKind::Hinge => -alpha,
    })
}

fn conjugate_or_inf<T: Scalar>(kind: LossKind, alpha: T) -> T {
    conjugate_eval(kind, alpha).unwrap_or_else(T::infinity)
}

/// Primal, dual and their difference at one (beta, alpha) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objectives<T> {
    pub primal: T,
    pub dual: T,
    pub gap: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions<T> {
    pub tol: T,
    pub max_passes: usize,
    /// Seeds the coordinate order; results are deterministic for a fixed seed.
    pub seed: u64,
}

impl<T: Scalar> Default for TrainOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-8), max_passes: 1_000_000, seed: 0 }
    }
}

/// Trained classifier in dual form.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    /// Dual variables for all n training instances (0 where `mask` is false).
    pub alpha: DVector<T>,
    pub lambda: T,
    pub loss: LossKind,
    pub mask: Vec<bool>,
    pub weights: DVector<T>,
    /// `E = sum_i v_i w_i`
    pub weight_sum: T,
    pub gram: Arc<DMatrix<T>>,
    pub labels: DVector<T>,
    pub certified_gap: T,
    pub passes: usize,
}

fn effective_weights<T: Scalar>(mask: &[bool], weights: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(
        mask.len(),
        mask.iter().zip(weights.iter()).map(|(&keep, &w)| if keep { w } else { T::zero() }),
    )
}

/// Primal at `beta = sum_i coef_i phi(x_i)` and dual at `alpha`, both under
/// effective weights `u`; the dual is `-inf` when `alpha` leaves `[0, 1]`.
pub fn objectives_at<T: Scalar>(
    gram: &DMatrix<T>,
    labels: &DVector<T>,
    loss: LossKind,
    lambda: T,
    coef: &DVector<T>,
    alpha: &DVector<T>,
    u: &DVector<T>,
) -> Result<Objectives<T>> {
    let e = u.sum();
    if !(e > T::zero()) {
        return Err(DrcsError::NonPositiveWeightSum(e.as_f64()));
    }
    let scores = gram * coef;
    let beta_sq = coef.dot(&scores);
    let mut loss_sum = T::zero();
    let mut conj_sum = T::zero();
    for i in 0..u.len() {
        if u[i] != T::zero() {
            loss_sum += u[i] * loss_eval(loss, labels[i], scores[i]);
            conj_sum += u[i] * conjugate_or_inf(loss, alpha[i]);
        }
    }
    let gamma = u.component_mul(labels).component_mul(alpha);
    let quad = gamma.dot(&(gram * &gamma));
    let primal = loss_sum / e + lambda / T::lit(2.0) * beta_sq;
    let dual = -conj_sum / e - quad / (T::lit(2.0) * lambda * e * e);
    Ok(Objectives { primal, dual, gap: primal - dual })
}

impl<T: Scalar> Model<T> {
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    /// `u = v * w`, zero for removed instances.
    pub fn effective_weights(&self) -> DVector<T> {
        effective_weights(&self.mask, &self.weights)
    }

    /// Representer coefficients `c` with `beta = sum_i c_i phi(x_i)`.
    pub fn coefficients(&self) -> DVector<T> {
        let scale = T::one() / (self.lambda * self.weight_sum);
        self.effective_weights().component_mul(&self.labels).component_mul(&self.alpha) * scale
    }

    /// Decision values on the training instances.
    pub fn training_scores(&self) -> DVector<T> {
        &*self.gram * self.coefficients()
    }

    /// Decision values for query points given the n x m cross-Gram.
    pub fn decision_scores(&self, k_cross: &DMatrix<T>) -> Result<DVector<T>> {
        if k_cross.nrows() != self.n() {
            return Err(DrcsError::DimensionMismatch(format!(
                "cross-Gram has {} rows, model has {} instances",
                k_cross.nrows(),
                self.n()
            )));
        }
        Ok(k_cross.tr_mul(&self.coefficients()))
    }

    pub fn predict(&self, k_cross: &DMatrix<T>) -> Result<Vec<i8>> {
        Ok(self.decision_scores(k_cross)?.iter().map(|&s| if s < T::zero() { -1 } else { 1 }).collect())
    }

    /// `||beta||^2` through the Gram expansion.
    pub fn rkhs_norm_sq(&self) -> T {
        let c = self.coefficients();
        c.dot(&(&*self.gram * &c)).max(T::zero())
    }

    /// Primal and dual objectives at this model's own (v, w).
    pub fn objectives(&self) -> Objectives<T> {
        objectives_at(
            &self.gram,
            &self.labels,
            self.loss,
            self.lambda,
            &self.coefficients(),
            &self.alpha,
            &self.effective_weights(),
        )
        .expect("trained models have a positive weight sum")
    }
}

/// RKHS distance between two models over the same training Gram.
pub fn rkhs_distance<T: Scalar>(a: &Model<T>, b: &Model<T>) -> Result<T> {
    if a.n() != b.n() {
        return Err(DrcsError::DimensionMismatch(format!("{} vs {} instances", a.n(), b.n())));
    }
    let diff = a.coefficients() - b.coefficients();
    Ok(diff.dot(&(&*a.gram * &diff)).max(T::zero()).sqrt())
}

/// Duality gap of a reference model's (beta, alpha) under new weights:
/// `P_{v,w}(beta_ref) - D_{v,w}(alpha_ref)` with the 1/E normalization.
pub fn evaluate_gap<T: Scalar>(model_ref: &Model<T>, mask: &[bool], weights: &DVector<T>) -> Result<Objectives<T>> {
    if mask.len() != model_ref.n() || weights.len() != model_ref.n() {
        return Err(DrcsError::DimensionMismatch(format!(
            "mask/weights of length {}/{} for a model over {} instances",
            mask.len(),
            weights.len(),
            model_ref.n()
        )));
    }
    let u = effective_weights(mask, weights);
    objectives_at(
        &model_ref.gram,
        &model_ref.labels,
        model_ref.loss,
        model_ref.lambda,
        &model_ref.coefficients(),
        &model_ref.alpha,
        &u,
    )
}

/// Maximizes the concave 1-D logistic subproblem in logit space:
/// root of `-s - z - q * sigmoid(s)`, which lies in `[-z - q, -z]`.
fn logistic_coordinate<T: Scalar>(z: T, q: T) -> T {
    let h = |s: T| -s - z - q * sigmoid(s);
    let mut lo = -z - q;
    let mut hi = -z;
    if q == T::zero() {
        return sigmoid(-z);
    }
    let mut s = lo + (hi - lo) / T::lit(2.0);
    for _ in 0..100 {
        let hs = h(s);
        if hs > T::zero() {
            lo = s;
        } else {
            hi = s;
        }
        let sig = sigmoid(s);
        let slope = -T::one() - q * sig * (T::one() - sig);
        let mut next = s - hs / slope;
        if !(next > lo && next < hi) {
            next = lo + (hi - lo) / T::lit(2.0);
        }
        let step = (next - s).abs();
        s = next;
        if step <= T::machine_epsilon() * (T::one() + s.abs()) || hi - lo <= T::machine_epsilon() * (T::one() + s.abs()) {
            break;
        }
    }
    sigmoid(s)
}

/// Sum of per-instance Fenchel-Young gaps divided by E; equals `P - D` at the
/// primal point recovered from `alpha`.
fn fenchel_young_gap<T: Scalar>(loss: LossKind, labels: &DVector<T>, alpha: &DVector<T>, u: &DVector<T>, scores: &DVector<T>, e: T) -> T {
    let mut total = T::zero();
    for i in 0..u.len() {
        if u[i] != T::zero() {
            let margin = labels[i] * scores[i];
            total += u[i] * (loss_eval(loss, labels[i], scores[i]) + conjugate_or_inf(loss, alpha[i]) + alpha[i] * margin);
        }
    }
    total / e
}

/// Trains the weighted model by dual coordinate ascent: an exact clipped step
/// for hinge, a safeguarded 1-D Newton solve for logistic. Stops once the
/// duality gap `P(beta(alpha)) - D(alpha)` is at most `opts.tol`.
pub fn train<T: Scalar>(
    gram: Arc<DMatrix<T>>,
    labels: &[i8],
    mask: &[bool],
    weights: &DVector<T>,
    lambda: T,
    loss: LossKind,
    opts: &TrainOptions<T>,
) -> Result<Model<T>> {
    let n = labels.len();
    if gram.nrows() != n || gram.ncols() != n || mask.len() != n || weights.len() != n {
        return Err(DrcsError::DimensionMismatch(format!(
            "gram {}x{}, {} labels, mask {}, weights {}",
            gram.nrows(),
            gram.ncols(),
            n,
            mask.len(),
            weights.len()
        )));
    }
    if !(lambda > T::zero()) || !lambda.is_finite_value() {
        return Err(DrcsError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(opts.tol > T::zero()) {
        return Err(DrcsError::InvalidArgument("tolerance must be positive".into()));
    }
    let active: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if active.is_empty() {
        return Err(DrcsError::EmptyActiveSet);
    }
    if let Some(&i) = active.iter().find(|&&i| !(weights[i] > T::zero())) {
        return Err(DrcsError::InvalidArgument(format!("weight {} of active instance {i} is not positive", weights[i])));
    }

    let y = DVector::from_iterator(n, labels.iter().map(|&l| label_scalar::<T>(l)));
    let u = effective_weights(mask, weights);
    let e = u.sum();
    let scale = T::one() / (lambda * e);

    let init = match loss {
        LossKind::Hinge => T::zero(),
        LossKind::Logistic => T::lit(0.5),
    };
    let mut alpha = DVector::from_iterator(n, (0..n).map(|i| if mask[i] { init } else { T::zero() }));
    // kg = K (u * y * alpha); scores = scale * kg
    let mut kg = &*gram * u.component_mul(&y).component_mul(&alpha);

    let mut order = active.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_gap = T::infinity();

    for pass in 1..=opts.max_passes {
        order.shuffle(&mut rng);
        for &i in &order {
            let f_i = scale * kg[i];
            let q = u[i] * gram[(i, i)] * scale;
            let old = alpha[i];
            let new = match loss {
                LossKind::Hinge => {
                    let g = T::one() - y[i] * f_i;
                    if q > T::zero() {
                        (old + g / q).max(T::zero()).min(T::one())
                    } else if g > T::zero() {
                        T::one()
                    } else if g < T::zero() {
                        T::zero()
                    } else {
                        old
                    }
                }
                LossKind::Logistic => logistic_coordinate(y[i] * f_i - q * old, q),
            };
            let delta = new - old;
            if delta != T::zero() {
                alpha[i] = new;
                kg.axpy(delta * u[i] * y[i], &gram.column(i), T::one());
            }
        }
        let scores = &kg * scale;
        let gap = fenchel_young_gap(loss, &y, &alpha, &u, &scores, e);
        if gap <= opts.tol {
            // confirm on freshly accumulated scores
            kg = &*gram * u.component_mul(&y).component_mul(&alpha);
            let gap = fenchel_young_gap(loss, &y, &alpha, &u, &(&kg * scale), e);
            best_gap = best_gap.min(gap);
            if gap <= opts.tol {
                return Ok(Model {
                    alpha,
                    lambda,
                    loss,
                    mask: mask.to_vec(),
                    weights: weights.clone(),
                    weight_sum: e,
                    gram,
                    labels: y,
                    certified_gap: gap,
                    passes: pass,
                });
            }
        } else {
            best_gap = best_gap.min(gap);
        }
    }
    Err(DrcsError::NotConverged { passes: opts.max_passes, best_gap: best_gap.as_f64() })
}

/// Trains on all instances with unit weights.
pub fn train_full<T: Scalar>(gram: Arc<DMatrix<T>>, labels: &[i8], lambda: T, loss: LossKind, opts: &TrainOptions<T>) -> Result<Model<T>> {
    let n = labels.len();
    train(gram, labels, &vec![true; n], &DVector::from_element(n, T::one()), lambda, loss, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc(m: DMatrix<f64>) -> Arc<DMatrix<f64>> {
        Arc::new(m)
    }

    #[test]
    fn loss_examples() {
        assert!((loss_eval(LossKind::Logistic, 1.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(loss_eval(LossKind::Hinge, 1.0, 2.0), 0.0);
        let tiny = loss_eval(LossKind::Logistic, -1.0, -50.0_f64);
        assert!(tiny.is_finite());
        assert!((tiny - (-50.0f64).exp()).abs() < 1e-30);
        assert!((tiny - 1.93e-22).abs() < 1e-24);
        assert!(loss_eval(LossKind::Logistic, 1.0, -800.0_f64).is_finite());
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(conjugate_eval(LossKind::Hinge, 0.3), Some(-0.3));
        assert!((conjugate_eval(LossKind::Logistic, 0.5_f64).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert_eq!(conjugate_eval(LossKind::Logistic, 1.2_f64), None);
        assert_eq!(conjugate_eval(LossKind::Hinge, -0.1_f64), None);
        assert_eq!(conjugate_eval(LossKind::Logistic, 0.0_f64), Some(0.0));
        assert_eq!(conjugate_eval(LossKind::Logistic, 1.0_f64), Some(0.0));
    }

    #[test]
    fn logistic_coordinate_solves_stationarity() {
        for &(z, q) in &[(0.0, 1.0), (3.0, 0.2), (-4.0, 10.0), (40.0, 0.5), (-40.0, 100.0)] {
            let t: f64 = logistic_coordinate(z, q);
            let s = (t / (1.0 - t)).ln();
            let resid = -s - z - q * t;
            assert!(resid.abs() < 1e-9 * (1.0 + z.abs() + q), "z={z} q={q} resid={resid}");
        }
    }

    #[test]
    fn hinge_two_points_strong_regularization_saturates() {
        let model = train_full(arc(DMatrix::identity(2, 2)), &[1, -1], 10.0, LossKind::Hinge, &TrainOptions::default()).unwrap();
        assert!((model.alpha[0] - 1.0).abs() < 1e-12);
        assert!((model.alpha[1] - 1.0).abs() < 1e-12);
        assert!(model.certified_gap <= 1e-8);
    }

    #[test]
    fn symmetric_pair_gets_equal_duals_and_opposite_scores() {
        let x = DMatrix::from_row_slice(2, 2, &[0.7, -0.3, -0.7, 0.3]);
        let spec = crate::kernel::KernelSpec::rbf(0.5).unwrap();
        let k = crate::kernel::gram(&x, &x, &spec).unwrap();
        for loss in [LossKind::Logistic, LossKind::Hinge] {
            let m = train_full(arc(k.clone()), &[1, -1], 0.3, loss, &TrainOptions { tol: 1e-15, ..TrainOptions::default() }).unwrap();
            assert!((m.alpha[0] - m.alpha[1]).abs() < 1e-6, "{loss:?} {:?} gap {}", m.alpha, m.certified_gap);
            let s = m.training_scores();
            assert!((s[0] + s[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn scores_follow_representer_formula() {
        let model = Model {
            alpha: DVector::from_vec(vec![0.5]),
            lambda: 1.0,
            loss: LossKind::Logistic,
            mask: vec![true],
            weights: DVector::from_vec(vec![1.0]),
            weight_sum: 1.0,
            gram: arc(DMatrix::from_element(1, 1, 1.0)),
            labels: DVector::from_vec(vec![1.0]),
            certified_gap: 0.0,
            passes: 0,
        };
        let s = model.decision_scores(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert!(model.decision_scores(&DMatrix::from_element(2, 1, 2.0)).is_err());

        let zero = Model { alpha: DVector::zeros(1), ..model };
        assert_eq!(zero.decision_scores(&DMatrix::from_element(1, 3, 2.0)).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn gap_at_reference_is_within_tolerance() {
        let x = DMatrix::from_fn(12, 3, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let labels: Vec<i8> = (0..12).map(|i| if (i * 5) % 3 == 0 { 1 } else { -1 }).collect();
        let k = crate::kernel::gram(&x, &x, &crate::kernel::KernelSpec::rbf(1.0).unwrap()).unwrap();
        for loss in [LossKind::Logistic, LossKind::Hinge] {
            let m = train_full(arc(k.clone()), &labels, 0.05, loss, &TrainOptions::default()).unwrap();
            let ones = DVector::from_element(12, 1.0);
            let obj = evaluate_gap(&m, &[true; 12], &ones).unwrap();
            assert!(obj.gap <= 1e-8 && obj.gap >= -1e-10, "{loss:?} {obj:?}");
            assert!((obj.gap - m.certified_gap).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_for_empty_active_set_and_zero_weight_sum() {
        let k = arc(DMatrix::identity(2, 2));
        let w = DVector::from_element(2, 1.0);
        let err = train(k.clone(), &[1, -1], &[false, false], &w, 1.0, LossKind::Hinge, &TrainOptions::default()).unwrap_err();
        assert_eq!(err, DrcsError::EmptyActiveSet);
        let m = train_full(k, &[1, -1], 1.0, LossKind::Hinge, &TrainOptions::default()).unwrap();
        assert!(matches!(evaluate_gap(&m, &[false, false], &w), Err(DrcsError::NonPositiveWeightSum(_))));
    }

    #[test]
    fn iteration_cap_reports_best_gap() {
        let x = DMatrix::from_fn(30, 2, |i, j| ((i * 3 + j) as f64).cos());
        let labels: Vec<i8> = (0..30).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let k = crate::kernel::gram(&x, &x, &crate::kernel::KernelSpec::rbf(0.1).unwrap()).unwrap();
        let opts = TrainOptions { tol: 1e-300, max_passes: 3, seed: 0 };
        match train_full(arc(k), &labels, 1e-3, LossKind::Logistic, &opts) {
            Err(DrcsError::NotConverged { passes: 3, best_gap }) => assert!(best_gap.is_finite()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
