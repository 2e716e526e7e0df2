#![allow(dead_code)]

use std::sync::Arc;

use drcs_core::{gram, train_full, Dataset, KernelSpec, LossKind, Model, TrainOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two Gaussian blobs centred at +-`shift` on every axis, alternating labels.
pub fn blobs(n: usize, d: usize, shift: f64, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
    let x = DMatrix::from_fn(n, d, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z + shift * f64::from(labels[i])
    });
    Dataset::new(x, labels).unwrap()
}

pub fn rbf_gram(ds: &Dataset<f64>, bandwidth: f64) -> DMatrix<f64> {
    gram(&ds.features, &ds.features, &KernelSpec::rbf(bandwidth).unwrap()).unwrap()
}

pub fn tight() -> TrainOptions<f64> {
    TrainOptions { tol: 1e-12, ..TrainOptions::default() }
}

pub fn reference(k: &DMatrix<f64>, labels: &[i8], lambda: f64, loss: LossKind) -> Model<f64> {
    train_full(Arc::new(k.clone()), labels, lambda, loss, &tight()).unwrap()
}

/// Random symmetric PSD matrix `B B^T` with entries of `B` in [-1, 1].
pub fn random_psd(d: usize, rank: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, rank, |_, _| rng.random_range(-1.0..1.0));
    let a = &b * b.transpose();
    (&a + a.transpose()) * 0.5
}

/// Uniform point on the sphere of radius `r` around `center`.
pub fn sphere_point(center: &DVector<f64>, r: f64, rng: &mut impl Rng) -> DVector<f64> {
    let z = DVector::from_fn(center.len(), |_, _| StandardNormal.sample(rng));
    center + z.normalize() * r
}
