use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgg_core::gradcam::{gradcam_weights, heatmap_stack, Normalization};
use stgg_core::sequence::FeatureSequence;
use stgg_core::skeleton::SkeletonGraph;
use stgg_core::stgcn::{class_score_gradients, ModelConfig, ModelParams};

fn chain5() -> SkeletonGraph {
    SkeletonGraph::new(5, vec![(0, 1), (1, 2), (2, 3), (1, 4)], None).unwrap()
}

fn setup(seed: u64) -> (SkeletonGraph, ModelParams, FeatureSequence) {
    let sk = chain5();
    let cfg = ModelConfig::from_widths(2, 5, 3, &[4, 6, 5], 3, &[1, 2, 1]);
    let p = ModelParams::init(&cfg, &sk, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..9)
        .map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (sk, p, FeatureSequence::from_valid("x", 0, frames, 11).unwrap())
}

#[test]
fn weights_and_heatmaps_match_definition_loops() {
    for seed in 0..5 {
        let (sk, p, x) = setup(seed);
        for class in 0..3 {
            let g = class_score_gradients(&p, &sk, &x, class).unwrap();
            let stack = heatmap_stack(&p, &sk, &x, class, Normalization::PerLayerMax, &[0, 1]).unwrap();
            assert_eq!(stack.layers.len(), 3);
            for (l, (map, grad)) in g.trace.maps.iter().zip(&g.feature_grads).enumerate() {
                let (c, n, t) = (map.channels, map.joints, map.frames);
                let at = |d: &[f64], k: usize, v: usize, s: usize| d[(s * c + k) * n + v];
                let beta: Vec<f64> = (0..c)
                    .map(|k| {
                        let mut sum = 0.0;
                        for v in 0..n {
                            for s in 0..t {
                                sum += at(&grad.data, k, v, s);
                            }
                        }
                        sum / (n * t) as f64
                    })
                    .collect();
                let fast = gradcam_weights(grad, map).unwrap();
                for (a, b) in fast.iter().zip(&beta) {
                    assert!((a - b).abs() < 1e-12);
                }
                let mut h = vec![vec![0.0; t]; n];
                for (v, row) in h.iter_mut().enumerate() {
                    for (s, cell) in row.iter_mut().enumerate() {
                        *cell = (0..c).map(|k| beta[k] * at(&map.data, k, v, s)).sum::<f64>().max(0.0);
                    }
                }
                let max = h.iter().flatten().copied().fold(0.0, f64::max);
                let layer = &stack.layers[l];
                assert_eq!((layer.n, layer.t), (n, t));
                for v in 0..n {
                    for s in 0..t {
                        let want = if max > 0.0 { h[v][s] / max } else { 0.0 };
                        assert!((layer.get(v, s) - want).abs() < 1e-12);
                    }
                }
                assert!(layer.values.iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(stack.upsampled[l].t, x.valid_length());
            }
        }
    }
}

#[test]
fn scaling_the_class_row_scales_raw_maps_only() {
    let (sk, p, x) = setup(3);
    let class = 1;
    let lambda = 3.5;
    let mut q = p.clone();
    let k = p.config.n_classes;
    for c in 0..p.config.final_channels() {
        q.head_weight[c * k + class] *= lambda;
    }
    let a = class_score_gradients(&p, &sk, &x, class).unwrap();
    let b = class_score_gradients(&q, &sk, &x, class).unwrap();
    let last = a.trace.maps.len() - 1;
    let raw = |g: &stgg_core::stgcn::GradTrace| {
        let beta = gradcam_weights(&g.feature_grads[last], &g.trace.maps[last]).unwrap();
        stgg_core::gradcam::heatmap_raw(&beta, &g.trace.maps[last]).unwrap()
    };
    for (u, v) in raw(&a).iter().zip(&raw(&b)) {
        assert!((lambda * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
    }
    let na = heatmap_stack(&p, &sk, &x, class, Normalization::PerLayerMax, &[]).unwrap();
    let nb = heatmap_stack(&q, &sk, &x, class, Normalization::PerLayerMax, &[]).unwrap();
    for (la, lb) in na.layers.iter().zip(&nb.layers) {
        for (u, v) in la.values.iter().zip(&lb.values) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_model_gives_zero_heatmaps() {
    let (sk, p, x) = setup(0);
    let zero = ModelParams::zeros(&p.config);
    let stack = heatmap_stack(&zero, &sk, &x, 0, Normalization::CrossLayer, &[0]).unwrap();
    assert_eq!(stack.layers.len(), zero.config.layer_count());
    assert!(stack.layers.iter().all(|l| l.values.iter().all(|&v| v == 0.0)));
    assert!(stack.concentration.iter().all(|&c| c == 0.0));
}
