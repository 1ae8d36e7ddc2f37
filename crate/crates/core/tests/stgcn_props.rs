use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgg_core::linalg::{spectral_norm, DenseMatrix};
use stgg_core::sequence::FeatureSequence;
use stgg_core::skeleton::SkeletonGraph;
use stgg_core::stgcn::{extract_embeddings, finetune, forward, train, Hyper, ModelConfig, ModelParams};
use stgg_core::synth::{generate_dataset, SynthConfig};

fn chain5() -> SkeletonGraph {
    SkeletonGraph::new(5, vec![(0, 1), (1, 2), (2, 3), (1, 4)], None).unwrap()
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn frobenius_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn relu_slope_lies_in_unit_interval(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        prop_assume!(a != b);
        let slope = (relu(a) - relu(b)) / (a - b);
        prop_assert!((0.0..=1.0).contains(&slope));
    }

    #[test]
    fn spatial_step_is_lipschitz(
        x in prop::collection::vec(-2.0f64..2.0, 5 * 3),
        y in prop::collection::vec(-2.0f64..2.0, 5 * 3),
        w in prop::collection::vec(-1.5f64..1.5, 3 * 4),
    ) {
        let a = chain5().normalized_adjacency().clone();
        let (x, y, w) = (matrix(5, 3, x), matrix(5, 3, y), matrix(3, 4, w));
        let step = |m: &DenseMatrix| {
            let z = a.matmul(&m.matmul(&w).unwrap()).unwrap();
            matrix(5, 4, z.as_slice().iter().map(|&v| relu(v)).collect())
        };
        let bound = spectral_norm(&a).unwrap() * spectral_norm(&w).unwrap() * frobenius_diff(&x, &y);
        prop_assert!(frobenius_diff(&step(&x), &step(&y)) <= bound * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn probabilities_sum_to_one(seed in 0u64..500, valid in 3usize..10) {
        let sk = chain5();
        let cfg = ModelConfig::from_widths(2, 5, 4, &[3, 5], 3, &[1, 2]);
        let mut p = ModelParams::init(&cfg, &sk, seed).unwrap();
        p.head_weight.iter_mut().for_each(|v| *v *= 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..valid).map(|_| (0..10).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let x = FeatureSequence::from_valid("x", 0, frames, 10).unwrap();
        let trace = forward(&p, &sk, &x, true).unwrap();
        prop_assert!((trace.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(trace.maps.iter().all(|m| m.data.iter().all(|&v| v >= 0.0)));
    }
}

fn two_class_set() -> (SkeletonGraph, Vec<FeatureSequence>) {
    let mut cfg = SynthConfig::three_class(30, 12);
    cfg.classes.truncate(2);
    let sk = cfg.skeleton_graph().unwrap();
    (sk, generate_dataset(&cfg).unwrap().0)
}

#[test]
fn toy_model_learns_two_separable_classes() {
    let (sk, data) = two_class_set();
    let cfg = ModelConfig::toy(3, 25, 2);
    let hyper = Hyper {
        epochs: 50,
        seed: 4,
        ..Hyper::default()
    };
    let out = train(&data, &sk, &cfg, &hyper).unwrap();
    let epochs = &out.history.epochs;
    assert_eq!(epochs.len(), 50);
    assert!(out.history.epochs_to_accuracy(0.95).is_some(), "{:?}", epochs.last());
    let mut best = f64::INFINITY;
    for e in epochs {
        assert!(e.loss <= 1.05 * best, "epoch {}: {} after {}", e.epoch, e.loss, best);
        best = best.min(e.loss);
    }
}

#[test]
fn finetune_without_freezing_is_training() {
    let (sk, data) = two_class_set();
    let data = &data[..12];
    let cfg = ModelConfig::from_widths(3, 25, 2, &[4, 4], 3, &[]);
    let hyper = Hyper {
        epochs: 3,
        batch: 4,
        seed: 9,
        ..Hyper::default()
    };
    let trained = train(data, &sk, &cfg, &hyper).unwrap();
    let init = ModelParams::init(&cfg, &sk, hyper.seed).unwrap();
    let tuned = finetune(&init, &sk, data, 0, &hyper).unwrap();
    assert_eq!(trained.params, tuned.params);
    let frozen = finetune(&init, &sk, data, 2, &hyper).unwrap();
    assert_eq!(frozen.params.layers, init.layers);
    assert_ne!(frozen.params.head_weight, init.head_weight);
}

#[test]
fn paper_preset_embedding_widths() {
    let sk = stgg_core::skeleton::builtin_skeleton_25();
    let cfg = ModelConfig::paper(3, 25, 3);
    let p = ModelParams::init(&cfg, &sk, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = (0..12)
        .map(|_| (0..75).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let x = FeatureSequence::from_valid("x", 0, frames, 16).unwrap();
    let emb = extract_embeddings(&p, &sk, &[x]).unwrap();
    let dims: Vec<usize> = emb.iter().map(|layer| layer[0].dim() / 25).collect();
    assert_eq!(dims, vec![64, 64, 64, 64, 128, 128, 128, 256, 256, 256]);
    let lengths: Vec<usize> = emb.iter().map(|layer| layer[0].valid_length()).collect();
    assert_eq!(lengths, cfg.layer_lengths(12));
}
