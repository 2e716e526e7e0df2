use drcs_core::{cv_split, gram, parse_libsvm, shift_radius, Dataset, KernelSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset<f64>> {
    (2usize..25, 1usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), -1e3f64..1e3], n * d),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(vals, signs)| {
                let mut labels: Vec<i8> = signs.iter().map(|&s| if s { 1 } else { -1 }).collect();
                labels[0] = 1;
                labels[1] = -1;
                Dataset::new(DMatrix::from_row_slice(n, d, &vals), labels).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn libsvm_round_trip_is_exact(ds in dataset_strategy()) {
        let back: Dataset<f64> = parse_libsvm(&ds.to_libsvm()).unwrap();
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.features, ds.features);
    }

    #[test]
    fn folds_partition_the_data(ds in dataset_strategy(), folds in 2usize..6, seed in any::<u64>()) {
        prop_assume!(ds.n() >= 2 * folds);
        let Ok(plan) = cv_split(&ds, folds, seed) else { return Ok(()) };
        let mut seen = vec![0usize; ds.n()];
        for f in 0..folds {
            let val = plan.validation_indices(f);
            let train = plan.train_indices(f);
            prop_assert_eq!(val.len() + train.len(), ds.n());
            for &i in &val {
                seen[i] += 1;
            }
            let sub = ds.subset(&train);
            prop_assert!(sub.has_both_classes());
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let again = cv_split(&ds, folds, seed).unwrap();
        prop_assert_eq!(plan.fold_of, again.fold_of);
    }

    #[test]
    fn shift_radius_grows_with_distance_from_one(n_plus in 0usize..1000, a in 0.0f64..3.0, da in 0.0f64..1.0) {
        let base = shift_radius(n_plus, a);
        prop_assert!(base >= 0.0);
        let further = if a >= 1.0 { a + da } else { (a - da).max(0.0) };
        prop_assert!(shift_radius(n_plus, further) >= base);
        prop_assert!(shift_radius(n_plus + 1, a) >= base);
    }

    #[test]
    fn gram_is_symmetric_psd(ds in dataset_strategy(), bw in 0.1f64..100.0) {
        let x = ds.features.map(|v| v / 1e3);
        for spec in [KernelSpec::rbf(bw).unwrap(), KernelSpec::Linear] {
            let k = gram(&x, &x, &spec).unwrap();
            prop_assert_eq!(&k, &k.transpose());
            let scale = k.amax().max(1.0);
            prop_assert!(k.symmetric_eigenvalues().iter().all(|&e| e >= -1e-10 * scale * ds.n() as f64));
        }
        let half = x.rows(0, 1).into_owned();
        let k12 = gram(&x, &half, &KernelSpec::rbf(bw).unwrap()).unwrap();
        let k21 = gram(&half, &x, &KernelSpec::rbf(bw).unwrap()).unwrap();
        prop_assert_eq!(k12, k21.transpose());
    }
}

#[test]
fn bundled_datasets_have_expected_shapes() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data");
    for (name, n, d, n_plus) in [("australian_scale", 690, 15, 307), ("heart_scale", 270, 14, 120), ("breast-cancer_scale", 683, 10, 239)] {
        let ds: Dataset<f64> = drcs_core::load_libsvm(format!("{root}/{name}")).unwrap();
        assert_eq!((ds.n(), ds.d(), ds.n_plus()), (n, d, n_plus), "{name}");
    }
}
