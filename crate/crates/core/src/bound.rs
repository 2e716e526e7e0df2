//! Certified upper bound on the worst-case weighted validation error.
//!
//! The duality gap of the reference solution under coreset weights `u = v * w`
//! is the quadratic `q(u) = u^T A u + b^T u + c`; its maximum over the weight
//! ball bounds the distance from the reference parameters to any reweighted
//! optimum, which in turn yields an interval for every validation score.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::erm::{conjugate_eval, loss_eval, Model};
use crate::error::{DrcsError, Result};
use crate::scalar::Scalar;

/// `q(u) = u^T A u + b^T u + c` for the sum-form objective
/// `sum_i u_i loss_i + (lambda/2) ||beta||^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticGapForm<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub c: T,
    /// Regularization strength of the sum-form objective the gap refers to.
    pub lambda: T,
}

impl<T: Scalar> QuadraticGapForm<T> {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// `q(u)` for an arbitrary effective weight vector.
    pub fn value(&self, u: &DVector<T>) -> T {
        u.dot(&(&self.a * u)) + self.b.dot(u) + self.c
    }

    /// `q(v * w)`.
    pub fn value_masked(&self, mask: &[bool], w: &DVector<T>) -> T {
        self.value(&masked(mask, w))
    }
}

pub(crate) fn masked<T: Scalar>(mask: &[bool], w: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(mask.len(), mask.iter().zip(w.iter()).map(|(&k, &x)| if k { x } else { T::zero() }))
}

/// Builds the gap quadratic from the full-data reference model.
///
/// `A = diag(alpha y) K diag(alpha y) / (2 lambda)`, `c = 1^T A 1` and
/// `b_i = loss_i + loss*(-alpha_i)`, with scores taken from the reference
/// model. For hinge `loss*(-alpha) = -alpha`, so `b_i = loss_i - alpha_i`.
/// The reference scores must equal `K (alpha y) / lambda`, i.e. `model_ref` is
/// trained with unit weights at `lambda / n` in the normalized objective.
pub fn quadratic_form<T: Scalar>(model_ref: &Model<T>, k: &DMatrix<T>, y: &DVector<T>, lambda: T) -> Result<QuadraticGapForm<T>> {
    let n = model_ref.n();
    if k.nrows() != n || k.ncols() != n || y.len() != n {
        return Err(DrcsError::DimensionMismatch(format!("gram {}x{}, {} labels, model over {n}", k.nrows(), k.ncols(), y.len())));
    }
    if !(lambda > T::zero()) {
        return Err(DrcsError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let ay = model_ref.alpha.component_mul(y);
    let half_inv = T::one() / (T::lit(2.0) * lambda);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = ay[i] * k[(i, j)] * ay[j] * half_inv;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let scores = k * &ay / lambda;
    let b = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let conj = conjugate_eval(model_ref.loss, model_ref.alpha[i]).unwrap_or_else(T::infinity);
            loss_eval(model_ref.loss, y[i], scores[i]) + conj
        }),
    );
    let c = a.sum();
    Ok(QuadraticGapForm { a, b, c, lambda })
}

/// Maximizer of the gap quadratic over `||w - 1|| <= S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallMax<T: Scalar> {
    pub w_star: DVector<T>,
    pub dg_max: T,
    /// Multiplier of the norm constraint (`mu >= lambda_max` of the active block).
    pub mu: T,
    pub hard_case: bool,
    /// `||2 A u + g - 2 mu u||` on the active block.
    pub kkt_residual: T,
}

/// Maximizes `q(v * w)` over `||w - 1||_2 <= s`, pinning removed coordinates at 1.
pub fn maximize_on_ball<T: Scalar>(form: &QuadraticGapForm<T>, mask: &[bool], s: T) -> Result<BallMax<T>> {
    let n = form.n();
    if mask.len() != n {
        return Err(DrcsError::DimensionMismatch(format!("mask of length {} for a form over {n}", mask.len())));
    }
    if !(s >= T::zero()) || !s.is_finite_value() {
        return Err(DrcsError::InvalidArgument(format!("ball radius must be nonnegative, got {s}")));
    }
    let act: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let d = act.len();
    let mut w_star = DVector::from_element(n, T::one());
    let finish = |w_star: DVector<T>, mu: T, hard_case: bool, kkt_residual: T| {
        let dg_max = form.value_masked(mask, &w_star);
        BallMax { w_star, dg_max, mu, hard_case, kkt_residual }
    };
    if d == 0 || s == T::zero() {
        return Ok(finish(w_star, T::zero(), false, T::zero()));
    }

    let a_act = DMatrix::from_fn(d, d, |i, j| form.a[(act[i], act[j])]);
    let b_act = DVector::from_iterator(d, act.iter().map(|&i| form.b[i]));
    let g = a_act.column_sum() * T::lit(2.0) + &b_act;
    let g_norm = g.norm();
    let scale = T::one().max(a_act.norm()).max(g_norm);
    if !scale.is_finite_value() {
        return Err(DrcsError::InvalidData("gap form has non-finite entries".into()));
    }

    let eig = SymmetricEigen::try_new(a_act.clone(), T::machine_epsilon(), 10_000)
        .ok_or_else(|| DrcsError::Eigen(format!("no convergence on a {d}x{d} block")))?;
    let (top, &lambda_max) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.partial_cmp(y.1).expect("finite eigenvalues"))
        .expect("nonempty block");
    if lambda_max <= T::lit(1e-15) * scale && g_norm <= T::lit(1e-15) * scale {
        // constant objective
        return Ok(finish(w_star, T::zero(), false, T::zero()));
    }

    let gamma = eig.eigenvectors.tr_mul(&g) / T::lit(2.0);
    let lead_tol = T::lit(1e-12) * (T::one() + lambda_max.abs());
    let is_lead = |j: usize| eig.eigenvalues[j] >= lambda_max - lead_tol;
    let coords_at = |mu: T, skip_lead: bool| -> DVector<T> {
        DVector::from_iterator(
            d,
            (0..d).map(|j| if skip_lead && is_lead(j) { T::zero() } else { gamma[j] / (mu - eig.eigenvalues[j]) }),
        )
    };

    let gamma_lead = (0..d).filter(|&j| is_lead(j)).map(|j| gamma[j] * gamma[j]).fold(T::zero(), |a, b| a + b).sqrt();
    let rest = coords_at(lambda_max, true);
    let rest_norm = rest.norm();
    let (coords, mu, hard_case) = if gamma_lead <= T::lit(1e-10) * gamma.norm().max(T::lit(1e-300)) && rest_norm <= s {
        let tau = (s * s - rest_norm * rest_norm).max(T::zero()).sqrt();
        let sign = if gamma[top] < T::zero() { -T::one() } else { T::one() };
        let mut coords = rest;
        coords[top] += sign * tau;
        (coords, lambda_max, true)
    } else {
        let eps = T::lit(1e-12) * (T::one() + lambda_max.abs());
        let mut lo = lambda_max;
        let mut hi = lambda_max + g_norm / (T::lit(2.0) * s) + eps;
        let hi_norm = coords_at(hi, false).norm();
        if !(hi_norm <= s) {
            return Err(DrcsError::Bracketing(format!(
                "norm {hi_norm} > radius {s} at mu={hi} (lambda_max={lambda_max}, ||g||={g_norm})"
            )));
        }
        for _ in 0..200 {
            let mid = lo + (hi - lo) / T::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if coords_at(mid, false).norm() > s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (coords_at(hi, false), hi, false)
    };

    let u = &eig.eigenvectors * coords;
    let kkt_residual = (&a_act * &u * T::lit(2.0) + &g - &u * (T::lit(2.0) * mu)).norm();
    let boundary_gain = u.dot(&(&a_act * &u)) + g.dot(&u);
    if boundary_gain < T::zero() {
        return Ok(finish(w_star, mu, hard_case, kkt_residual));
    }
    for (k, &i) in act.iter().enumerate() {
        w_star[i] += u[k];
    }
    Ok(finish(w_star, mu, hard_case, kkt_residual))
}

/// `R = sqrt(2 dg / lambda)`; tiny negative gaps from rounding count as zero.
pub fn radius<T: Scalar>(dg_max: T, lambda: T) -> T {
    (T::lit(2.0) * dg_max.max(T::zero()) / lambda).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreInterval<T> {
    pub lo: T,
    pub hi: T,
}

/// Range of `y' f(x')` over the parameter ball of radius `r`.
pub fn score_interval<T: Scalar>(score_center: T, k_self: T, r: T) -> ScoreInterval<T> {
    let half = k_self.max(T::zero()).sqrt() * r;
    ScoreInterval { lo: score_center - half, hi: score_center + half }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertCounts {
    pub surely_correct: usize,
    pub surely_incorrect: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `zeta_i` is true iff validation point i is correctly classified by every model in the ball.
    pub zeta: Vec<bool>,
    pub counts: CertCounts,
}

/// Certificate from validation score centers `y'_i f_ref(x'_i)` and `K(x'_i, x'_i)`.
pub fn certify_scores<T: Scalar>(centers: &DVector<T>, k_val_diag: &DVector<T>, r: T) -> Result<Certificate> {
    if centers.len() != k_val_diag.len() {
        return Err(DrcsError::DimensionMismatch(format!("{} centers, {} diagonal entries", centers.len(), k_val_diag.len())));
    }
    let mut counts = CertCounts { surely_correct: 0, surely_incorrect: 0, unknown: 0 };
    let zeta = centers
        .iter()
        .zip(k_val_diag.iter())
        .map(|(&c, &k)| {
            let iv = score_interval(c, k, r);
            if iv.lo > T::zero() {
                counts.surely_correct += 1;
                true
            } else {
                if iv.hi < T::zero() {
                    counts.surely_incorrect += 1;
                } else {
                    counts.unknown += 1;
                }
                false
            }
        })
        .collect();
    Ok(Certificate { zeta, counts })
}

/// Certificate for validation data given the n x n' cross-Gram to the training set.
pub fn certify<T: Scalar>(model_ref: &Model<T>, k_val: &DMatrix<T>, k_val_diag: &DVector<T>, y_val: &[i8], r: T) -> Result<Certificate> {
    if k_val.ncols() != y_val.len() {
        return Err(DrcsError::DimensionMismatch(format!("{} validation columns, {} labels", k_val.ncols(), y_val.len())));
    }
    let scores = model_ref.decision_scores(k_val)?;
    let centers = DVector::from_iterator(y_val.len(), y_val.iter().zip(scores.iter()).map(|(&y, &s)| if y > 0 { s } else { -s }));
    certify_scores(&centers, k_val_diag, r)
}

/// `min { zeta^T w' : ||w' - 1|| <= Q, 1^T w' = n' }` in closed form.
///
/// Returns the value `1^T zeta - Q sqrt(||zeta||^2 - (1^T zeta)^2 / n')` and the minimizer.
pub fn min_weighted_indicator<T: Scalar>(zeta: &DVector<T>, q: T) -> Result<(T, DVector<T>)> {
    let n = zeta.len();
    if n == 0 {
        return Err(DrcsError::Empty("validation indicator vector".into()));
    }
    let nf = T::from_usize_lossy(n);
    let sum = zeta.sum();
    let radicand = (zeta.norm_squared() - sum * sum / nf).max(T::zero());
    let root = radicand.sqrt();
    let value = sum - q * root;
    let w = if root > T::zero() {
        let mean = sum / nf;
        DVector::from_iterator(n, zeta.iter().map(|&z| T::one() - q / root * (z - mean)))
    } else {
        DVector::from_element(n, T::one())
    };
    Ok((value, w))
}

pub fn zeta_vector<T: Scalar>(zeta: &[bool]) -> DVector<T> {
    DVector::from_iterator(zeta.len(), zeta.iter().map(|&z| if z { T::one() } else { T::zero() }))
}

/// Upper bound on the worst-case weighted validation error, clamped to [0, 1].
pub fn worst_case_error_ub<T: Scalar>(zeta: &[bool], q: T) -> Result<T> {
    let (value, _) = min_weighted_indicator(&zeta_vector::<T>(zeta), q)?;
    let n = T::from_usize_lossy(zeta.len());
    Ok((T::one() - value / n).max(T::zero()).min(T::one()))
}

/// Same bound from the certified count alone: `1 - (m - Q sqrt(m - m^2/n')) / n'`.
pub fn worst_case_error_ub_from_count<T: Scalar>(certified: usize, n_val: usize, q: T) -> T {
    let m = T::from_usize_lossy(certified);
    let n = T::from_usize_lossy(n_val);
    let radicand = (m - m * m / n).max(T::zero());
    (T::one() - (m - q * radicand.sqrt()) / n).max(T::zero()).min(T::one())
}

/// Everything the certificate says about one coreset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport<T: Scalar> {
    pub dg_max: T,
    pub w_star: DVector<T>,
    pub radius: T,
    pub zeta: Vec<bool>,
    pub counts: CertCounts,
    pub ub: T,
}

/// Validation side of the certificate, fixed across candidate coresets.
#[derive(Debug, Clone)]
pub struct ValidationScores<T: Scalar> {
    /// `y'_i f_ref(x'_i)`
    pub centers: DVector<T>,
    pub k_diag: DVector<T>,
    pub q: T,
}

impl<T: Scalar> ValidationScores<T> {
    pub fn new(model_ref: &Model<T>, k_val: &DMatrix<T>, k_val_diag: DVector<T>, y_val: &[i8], q: T) -> Result<Self> {
        if k_val.ncols() != y_val.len() || k_val_diag.len() != y_val.len() {
            return Err(DrcsError::DimensionMismatch(format!(
                "{} validation columns, {} diagonal entries, {} labels",
                k_val.ncols(),
                k_val_diag.len(),
                y_val.len()
            )));
        }
        if y_val.is_empty() {
            return Err(DrcsError::Empty("validation set".into()));
        }
        let scores = model_ref.decision_scores(k_val)?;
        let centers = DVector::from_iterator(y_val.len(), y_val.iter().zip(scores.iter()).map(|(&y, &s)| if y > 0 { s } else { -s }));
        Ok(Self { centers, k_diag: k_val_diag, q })
    }

    /// Worst-case error bound for a parameter ball of radius `r`.
    pub fn ub_for_radius(&self, r: T) -> T {
        let certified = self
            .centers
            .iter()
            .zip(self.k_diag.iter())
            .filter(|&(&c, &k)| score_interval(c, k, r).lo > T::zero())
            .count();
        worst_case_error_ub_from_count(certified, self.centers.len(), self.q)
    }

    pub fn ub_for_gap(&self, dg: T, lambda: T) -> T {
        self.ub_for_radius(radius(dg, lambda))
    }

    /// Full report for the coreset `mask` under training-weight radius `s`.
    pub fn report(&self, form: &QuadraticGapForm<T>, mask: &[bool], s: T) -> Result<BoundReport<T>> {
        let ball = maximize_on_ball(form, mask, s)?;
        let r = radius(ball.dg_max, form.lambda);
        let cert = certify_scores(&self.centers, &self.k_diag, r)?;
        let ub = worst_case_error_ub(&cert.zeta, self.q)?;
        Ok(BoundReport { dg_max: ball.dg_max, w_star: ball.w_star, radius: r, zeta: cert.zeta, counts: cert.counts, ub })
    }
}
