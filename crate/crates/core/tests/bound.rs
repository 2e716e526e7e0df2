mod common;

use common::{blobs, random_psd, rbf_gram, reference, sphere_point};
use drcs_core::erm::{conjugate_eval, loss_eval};
use drcs_core::{
    maximize_on_ball, min_weighted_indicator, quadratic_form, radius, worst_case_error_ub, worst_case_error_ub_from_count, LossKind,
    QuadraticGapForm,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sum-form gap `P_s(beta_ref) - D_s(alpha_ref)` under effective weights `u`,
/// written out term by term.
fn sum_form_gap(k: &DMatrix<f64>, y: &[f64], alpha: &[f64], loss: LossKind, lambda: f64, u: &[f64]) -> f64 {
    let n = y.len();
    let mut primal = 0.0;
    let mut dual = 0.0;
    let mut beta_sq = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        let mut f = 0.0;
        for j in 0..n {
            f += y[j] * alpha[j] * k[(i, j)] / lambda;
            beta_sq += y[i] * alpha[i] * y[j] * alpha[j] * k[(i, j)] / (lambda * lambda);
            quad += u[i] * y[i] * alpha[i] * u[j] * y[j] * alpha[j] * k[(i, j)];
        }
        primal += u[i] * loss_eval(loss, y[i], f);
        dual -= u[i] * conjugate_eval(loss, alpha[i]).unwrap();
    }
    primal += lambda / 2.0 * beta_sq;
    dual -= quad / (2.0 * lambda);
    primal - dual
}

fn random_form(d: usize, rng: &mut ChaCha8Rng) -> QuadraticGapForm<f64> {
    let rank = rng.random_range(1..=d);
    QuadraticGapForm {
        a: random_psd(d, rank, rng),
        b: DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)),
        c: rng.random_range(0.0..1.0),
        lambda: 1.0,
    }
}

/// Projected gradient ascent on the sphere `||w - 1|| = s`, started from `w0`.
fn polish(form: &QuadraticGapForm<f64>, w0: &DVector<f64>, s: f64) -> DVector<f64> {
    let center = DVector::from_element(w0.len(), 1.0);
    let step = 0.1 / (1.0 + form.a.norm());
    let mut w = w0.clone();
    for _ in 0..20_000 {
        let grad = &form.a * &w * 2.0 + &form.b;
        let moved = &w + grad * step;
        let off = &moved - &center;
        w = &center + off.normalize() * s;
    }
    w
}

#[test]
fn quadratic_matches_term_by_term_sum_form_gap() {
    let ds = blobs(3, 2, 0.5, 21);
    let k = rbf_gram(&ds, 1.0);
    let y: Vec<f64> = ds.labels.iter().map(|&l| f64::from(l)).collect();
    let lambda_s = 0.9;
    for loss in [LossKind::Logistic, LossKind::Hinge] {
        let m = reference(&k, &ds.labels, lambda_s / 3.0, loss);
        let form = quadratic_form(&m, &k, &ds.label_vector(), lambda_s).unwrap();
        let alpha: Vec<f64> = m.alpha.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
            let expect = sum_form_gap(&k, &y, &alpha, loss, lambda_s, &u);
            let got = form.value(&DVector::from_column_slice(&u));
            assert!((got - expect).abs() < 1e-12 * (1.0 + expect.abs()), "{loss:?}: {got} vs {expect}");
        }
        // at unit weights the sum-form gap is n times the normalized gap
        let q1 = form.value(&DVector::from_element(3, 1.0));
        assert!((q1 - 3.0 * m.certified_gap).abs() < 1e-12);
        assert_eq!(form.a, form.a.transpose());
        let eig = form.a.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-12));
    }
}

#[test]
fn four_dim_form_matches_sampling_and_polish() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let form = random_form(4, &mut rng);
    let s = 0.7;
    let best = maximize_on_ball(&form, &[true; 4], s).unwrap();
    let center = DVector::from_element(4, 1.0);
    let sampled = (0..1_000_000).map(|_| form.value(&sphere_point(&center, s, &mut rng))).fold(f64::NEG_INFINITY, f64::max);
    assert!((best.dg_max - sampled).abs() < 1e-3, "{} vs {sampled}", best.dg_max);
    assert!(best.dg_max >= sampled - 1e-12);
    let polished = polish(&form, &best.w_star, s);
    assert!((form.value(&polished) - best.dg_max).abs() < 1e-8);
}

#[test]
fn maximizer_dominates_random_feasible_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let d = 2 + trial % 6;
        let form = random_form(d, &mut rng);
        let mut mask = vec![true; d];
        mask[trial % d] = trial % 3 != 0;
        let s = rng.random_range(0.0..1.5);
        let best = maximize_on_ball(&form, &mask, s).unwrap();
        let center = DVector::from_element(d, 1.0);
        assert!((&best.w_star - &center).norm() <= s + 1e-9);
        for _ in 0..10_000 {
            let r = s * rng.random_range(0.0f64..1.0).powf(1.0 / d as f64);
            let w = sphere_point(&center, r, &mut rng);
            assert!(form.value_masked(&mask, &w) <= best.dg_max + 1e-9);
        }
    }
}

#[test]
fn minimizing_validation_weights_match_projected_gradient() {
    let zeta: DVector<f64> = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
    let (value, w) = min_weighted_indicator(&zeta, 1.0).unwrap();
    // projected gradient descent on {1^T w = 4, ||w - 1|| <= 1}
    let center = DVector::from_element(4, 1.0);
    let mut x = center.clone();
    for _ in 0..5_000 {
        x -= &zeta * 0.01;
        let shift = (x.sum() - 4.0) / 4.0;
        x.add_scalar_mut(-shift);
        let off = &x - &center;
        if off.norm() > 1.0 {
            x = &center + off.normalize();
        }
    }
    assert!((zeta.dot(&x) - 0.133975).abs() < 1e-6);
    assert!((value - zeta.dot(&x)).abs() < 1e-9);
    assert!((&w - &x).norm() < 1e-6);
}

#[test]
fn radius_scales_as_inverse_sqrt_lambda() {
    for &dg in &[0.0_f64, 1e-6, 0.3, 7.0] {
        for &lambda in &[1e-3_f64, 0.5, 2.0, 690.0] {
            let r = radius(dg, lambda);
            assert!((r * lambda.sqrt() - (2.0 * dg).sqrt()).abs() <= 1e-12 * (1.0 + r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_form_min_is_feasible_and_optimal(
        zeta in prop::collection::vec(0.0f64..=1.0, 3..30),
        q in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let n = zeta.len();
        let z = DVector::from_vec(zeta);
        let (value, w) = min_weighted_indicator(&z, q).unwrap();
        let center = DVector::from_element(n, 1.0);
        prop_assert!((w.sum() - n as f64).abs() < 1e-9);
        prop_assert!((&w - &center).norm() <= q + 1e-9);
        prop_assert!((z.dot(&w) - value).abs() < 1e-9);
        // random feasible points never do better
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let mut dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let mean = dir.mean();
            dir.add_scalar_mut(-mean);
            if dir.norm() == 0.0 { continue; }
            let r = q * rng.random_range(0.0..=1.0);
            let cand = &center + dir.normalize() * r;
            prop_assert!(z.dot(&cand) >= value - 1e-9);
        }
    }

    #[test]
    fn binary_bound_paths_agree(bits in prop::collection::vec(any::<bool>(), 1..60), q in 0.0f64..3.0) {
        let m = bits.iter().filter(|&&b| b).count();
        let a = worst_case_error_ub(&bits, q).unwrap();
        let b = worst_case_error_ub_from_count(m, bits.len(), q);
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn bound_is_monotone_in_q_and_certified_count(n in 1usize..80, m in 0usize..80, q in 0.0f64..2.0, dq in 0.0f64..1.0) {
        let m = m.min(n);
        let base = worst_case_error_ub_from_count::<f64>(m, n, q);
        prop_assert!(worst_case_error_ub_from_count::<f64>(m, n, q + dq) >= base - 1e-15);
        if m > 0 {
            prop_assert!(worst_case_error_ub_from_count::<f64>(m - 1, n, q) >= base - 1e-15);
        }
    }

    #[test]
    fn ball_maximizer_kkt(seed in any::<u64>(), d in 1usize..6, s in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let form = random_form(d, &mut rng);
        let best = maximize_on_ball(&form, &vec![true; d], s).unwrap();
        prop_assert!(best.kkt_residual <= 1e-8);
    }
}
