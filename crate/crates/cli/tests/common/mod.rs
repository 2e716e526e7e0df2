#![allow(dead_code)]

use std::path::{Path, PathBuf};

use drcs_core::Dataset64;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two Gaussian blobs at +-`shift` on every axis with alternating labels.
pub fn blobs(n: usize, d: usize, shift: f64, seed: u64) -> Dataset64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
    let x = DMatrix::from_fn(n, d, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z + shift * f64::from(labels[i])
    });
    Dataset64::new(x, labels).unwrap()
}

pub fn write_dataset(dir: &Path, name: &str, ds: &Dataset64) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, ds.to_libsvm()).unwrap();
    path
}

pub fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}
