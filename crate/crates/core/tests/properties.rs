use std::collections::HashSet;

use fednl::contribution::contributions;
use fednl::dataset::{
    partition_non_iid, split_three_folds, synth_gaussian, Dataset, PartitionStrategy, SynthParams,
};
use fednl::noise::{asymmetric_matrix, symmetric_matrix, FlipPair};
use fednl::seed;
use fednl::trainer::{loss_and_gradient, smoothness_bound, ModelParams};
use proptest::prelude::*;

fn blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> Dataset {
    synth_gaussian(&SynthParams {
        classes,
        per_class,
        dim,
        separation: 3.0,
        seed,
    })
    .unwrap()
}

fn id_set(parts: &[Dataset]) -> (usize, HashSet<u64>) {
    let total = parts.iter().map(Dataset::len).sum();
    let ids = parts.iter().flat_map(|p| p.ids()).collect();
    (total, ids)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn partitions_are_disjoint_and_cover(
        classes in 2usize..6,
        per_class in 8usize..40,
        n in 1usize..6,
        seed in any::<u64>(),
        skewed in any::<bool>(),
        skew in 0.0f64..1.0,
    ) {
        let d = blobs(classes, per_class, 2, seed);
        let strategy = if skewed {
            PartitionStrategy::LabelSkew { k_major: 1, skew }
        } else {
            PartitionStrategy::ShuffleSplit
        };
        let parts = partition_non_iid(&d, n, seed, strategy).unwrap();
        prop_assert_eq!(parts.len(), n);
        let (total, ids) = id_set(&parts);
        prop_assert_eq!(total, d.len());
        prop_assert_eq!(ids, d.ids().into_iter().collect::<HashSet<_>>());
    }

    #[test]
    fn folds_are_disjoint_and_cover(len in 3usize..300, seed in any::<u64>()) {
        let d = blobs(3, len.div_ceil(3), 2, seed);
        let split = split_three_folds(&d, seed).unwrap();
        let (total, ids) = id_set(&split.folds);
        prop_assert_eq!(total, d.len());
        prop_assert_eq!(ids.len(), d.len());
        let sizes: Vec<usize> = split.folds.iter().map(Dataset::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn contributions_normalize_and_order(
        gammas in prop::collection::vec(1e-8f64..1e4, 1..16),
        scale in 1e-4f64..1e4,
    ) {
        let eps = contributions(&gammas).unwrap().epsilon;
        prop_assert!((eps.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..gammas.len() {
            for j in 0..gammas.len() {
                if gammas[i] < gammas[j] {
                    prop_assert!(eps[i] >= eps[j]);
                }
            }
        }
        let scaled: Vec<f64> = gammas.iter().map(|g| g * scale).collect();
        let again = contributions(&scaled).unwrap().epsilon;
        for (a, b) in eps.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn matrices_are_row_stochastic(classes in 2usize..10, beta in 0.0f64..0.9, mass in 0.0f64..0.45) {
        let sym = symmetric_matrix(classes, beta).unwrap();
        let pairs: Vec<FlipPair> = (0..classes)
            .map(|k| FlipPair { src: k, dst: (k + 1) % classes, mass })
            .collect();
        let asym = asymmetric_matrix(classes, &pairs).unwrap();
        for m in [&sym, &asym] {
            for row in m.rows() {
                prop_assert!(row.iter().all(|p| *p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let d = blobs(3, 20, 4, 5);
    let view = d.view();
    let h = 1e-6;
    for pair in 0..20u64 {
        let mut rng = seed::rng(seed::derive(5, &[pair]));
        let model = ModelParams::random_uniform(4, 3, 2.0, &mut rng);
        let batch = &view.samples()[pair as usize..pair as usize + 8];
        let (_, grad) = loss_and_gradient(&model, batch, 0.05).unwrap();
        for j in 0..model.weights().len() {
            let at = |delta: f64| {
                let mut w = model.weights().to_vec();
                w[j] += delta;
                let m = ModelParams::from_weights(4, 3, w).unwrap();
                loss_and_gradient(&m, batch, 0.05).unwrap().0
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            assert!(
                (numeric - grad.weights()[j]).abs() <= 1e-5,
                "pair {pair} coordinate {j}: {numeric} vs {}",
                grad.weights()[j]
            );
        }
    }
}

#[test]
fn objective_is_strongly_convex_and_smooth() {
    let d = blobs(3, 30, 3, 9);
    let view = d.view();
    let mu = 0.1;
    let l = smoothness_bound(&view, mu);
    for pair in 0..50u64 {
        let mut rng = seed::rng(seed::derive(9, &[pair]));
        let x = ModelParams::random_uniform(3, 3, 3.0, &mut rng);
        let y = ModelParams::random_uniform(3, 3, 3.0, &mut rng);
        let (fx, gx) = loss_and_gradient(&x, view.samples(), mu).unwrap();
        let (fy, _) = loss_and_gradient(&y, view.samples(), mu).unwrap();
        let diff = y.sub(&x);
        let linear = fx + gx.dot(&diff);
        let dist = diff.norm_sq();
        assert!(fy >= linear + 0.5 * mu * dist - 1e-9, "pair {pair} violates strong convexity");
        assert!(fy <= linear + 0.5 * l * dist + 1e-9, "pair {pair} violates smoothness");
    }
}
