//! End-to-end acceptance run. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and a summary. Failures only change the exit status when
//! `STGG_ACCEPTANCE_STRICT=1`, so the rest of a workspace test run still
//! executes after this target.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgg_cli::commands::{self, Freeze, GradcamTarget, SmoothnessSummary};
use stgg_cli::manifest::load_dataset;
use stgg_core::dsgraph::{
    laplacian, laplacian_quadratic, nearest_candidates, nnk_neighborhoods, DatasetGraph, GraphMethod,
};
use stgg_core::dtw::{dtw_distance, fit_window_weights, kernel_matrix};
use stgg_core::gradcam::Normalization;
use stgg_core::linalg::{nnls_solve, quadratic_objective, sym_eig, DenseMatrix};
use stgg_core::sequence::FeatureSequence;
use stgg_core::skeleton::{builtin_skeleton_25, top_third_share, SkeletonGraph};
use stgg_core::stgcn::{class_score_gradients, evaluate, feature_map_score, forward, Hyper, ModelConfig, ModelParams};
use stgg_core::synth::{SynthConfig, LEGS};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn cosine_cost(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na > 1e-12, nb > 1e-12) {
        (false, false) => 0.0,
        (true, true) => (1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)) / 2.0,
        _ => 1.0,
    }
}

/// Cheapest monotone path by exhaustive search, shortest on cost ties,
/// divided by its length.
fn path_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn walk(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, len: usize, best: &mut (f64, usize)) {
        let acc = acc + cosine_cost(&a[i], &b[j]);
        let len = len + 1;
        let (n, m) = (a.len(), b.len());
        if i + 1 == n && j + 1 == m {
            if acc < best.0 || (acc == best.0 && len < best.1) {
                *best = (acc, len);
            }
            return;
        }
        if i + 1 < n && j + 1 < m {
            walk(a, b, i + 1, j + 1, acc, len, best);
        }
        if i + 1 < n {
            walk(a, b, i + 1, j, acc, len, best);
        }
        if j + 1 < m {
            walk(a, b, i, j + 1, acc, len, best);
        }
    }
    let mut best = (f64::INFINITY, 0);
    walk(a, b, 0, 0, 0.0, 0, &mut best);
    best.0 / best.1 as f64
}

fn random_frames(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn dtw_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut pairs, mut worst) = (0, 0.0f64);
    for n in 1..=8 {
        for m in 1..=8 {
            for _ in 0..4 {
                let a = random_frames(&mut rng, n, 3);
                let b = random_frames(&mut rng, m, 3);
                worst = worst.max((dtw_distance(&a, &b).unwrap() - path_oracle(&a, &b)).abs());
                pairs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pairs >= 200 && worst <= 1e-12 && secs < 10.0,
        format!("{pairs} pairs, max |diff| {worst:.1e}, {secs:.2} s"),
    )
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let b = DenseMatrix::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut g = b.transpose().matmul(&b).unwrap();
    for i in 0..n {
        g[(i, i)] += 0.1;
    }
    g
}

fn nnls_kkt() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    let instances = 120;
    for instance in 0..instances {
        let n = 1 + instance % 15;
        let g = random_pd(&mut rng, n);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let theta = nnls_solve(&g, &b, 1e-10).unwrap().theta;
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| g[(i, j)] * theta[j]).sum::<f64>() - b[i])
            .collect();
        let slack: f64 = theta.iter().zip(&grad).map(|(t, gi)| t * gi).sum();
        let best = quadratic_objective(&g, &b, &theta);
        let dominated = (0..100).all(|_| {
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            best <= quadratic_objective(&g, &b, &u) + 1e-12
        });
        let ok =
            theta.iter().all(|&t| t >= 0.0) && grad.iter().all(|&gi| gi >= -1e-8) && slack.abs() <= 1e-8 && dominated;
        failures += usize::from(!ok);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 10.0,
        format!("{instances} instances, {failures} violations, {secs:.2} s"),
    )
}

fn grid_minimize(g: [[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
    let f = |x: f64, y: f64| 0.5 * (g[0][0] * x * x + 2.0 * g[0][1] * x * y + g[1][1] * y * y) - b[0] * x - b[1] * y;
    let (mut cx, mut cy, mut half) = (1.0, 1.0, 1.0);
    for _ in 0..12 {
        let mut best = (f64::INFINITY, cx, cy);
        for a in 0..=40 {
            for c in 0..=40 {
                let x = (cx - half + half * a as f64 / 20.0).max(0.0);
                let y = (cy - half + half * c as f64 / 20.0).max(0.0);
                if f(x, y) < best.0 {
                    best = (f(x, y), x, y);
                }
            }
        }
        (cx, cy, half) = (best.1, best.2, half / 5.0);
    }
    [cx, cy]
}

fn nnk_subset_and_pruning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let data: Vec<FeatureSequence> = (0..20)
        .map(|i| {
            let valid = rng.random_range(4..=12);
            FeatureSequence::from_valid(format!("q{i}"), 0, random_frames(&mut rng, valid, 6), 12).unwrap()
        })
        .collect();
    let kernel = kernel_matrix(&data, &fit_window_weights(&data, 3).unwrap()).unwrap();
    let mut outside = 0;
    for hood in nnk_neighborhoods(&kernel, 10).unwrap() {
        let knn = nearest_candidates(&kernel, hood.node, 10);
        outside += hood.support(1e-8).iter().filter(|(j, _)| !knn.contains(j)).count();
    }
    let fixture = DenseMatrix::from_rows(&[vec![1.0, 0.9, 0.8], vec![0.9, 1.0, 0.95], vec![0.8, 0.95, 1.0]]).unwrap();
    let hood = &nnk_neighborhoods(&fixture, 2).unwrap()[0];
    let s = hood.shift;
    let oracle = grid_minimize([[1.0 + s, 0.95], [0.95, 1.0 + s]], [0.9, 0.8]);
    let theta = &hood.solution.theta;
    let err = (theta[0] - oracle[0]).abs().max((theta[1] - oracle[1]).abs());
    outcome(
        outside == 0 && theta[1] == 0.0 && err <= 1e-6,
        format!(
            "{outside} support entries outside KNN; redundant weight {}, grid error {err:.1e}",
            theta[1]
        ),
    )
}

fn chain5() -> SkeletonGraph {
    SkeletonGraph::new(5, vec![(0, 1), (1, 2), (2, 3), (1, 4)], None).unwrap()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let sk = chain5();
    let cfg = ModelConfig::from_widths(4, 5, 3, &[4, 4], 3, &[]);
    let mut p = ModelParams::init(&cfg, &sk, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for l in &mut p.layers {
        for q in l.importance.iter_mut().filter(|q| **q > 0.0) {
            *q = rng.random_range(0.5..1.5);
        }
    }
    let x = FeatureSequence::from_valid("x", 0, random_frames(&mut rng, 12, 20), 12).unwrap();
    let h = 1e-5;
    let close = |a: f64, n: f64| {
        let d = (a - n).abs();
        d <= 1e-7 || d <= 1e-4 * a.abs().max(n.abs())
    };
    let (mut checked, mut bad) = (0usize, 0usize);
    for class in 0..3 {
        let g = class_score_gradients(&p, &sk, &x, class).unwrap();
        let score = |q: &ModelParams| forward(q, &sk, &x, false).unwrap().logits[class];
        let analytic: Vec<Vec<f64>> = g.params.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
        let values: Vec<Vec<f64>> = p.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
        for (k, grads) in analytic.iter().enumerate() {
            let is_importance = k < 3 * cfg.layer_count() && k % 3 == 2;
            for (idx, &a) in grads.iter().enumerate() {
                if is_importance && values[k][idx] == 0.0 {
                    // Off the skeleton support; never enters the model.
                    continue;
                }
                let mut plus = p.clone();
                plus.tensors_mut()[k][idx] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[k][idx] -= h;
                checked += 1;
                bad += usize::from(!close(a, (score(&plus) - score(&minus)) / (2.0 * h)));
            }
        }
        for (l, (map, grad)) in g.trace.maps.iter().zip(&g.feature_grads).enumerate() {
            for idx in 0..map.data.len() {
                let mut plus = map.clone();
                plus.data[idx] += h;
                let mut minus = map.clone();
                minus.data[idx] -= h;
                let numeric = (feature_map_score(&p, &sk, l, &plus, class).unwrap()
                    - feature_map_score(&p, &sk, l, &minus, class).unwrap())
                    / (2.0 * h);
                checked += 1;
                bad += usize::from(!close(grad.data[idx], numeric));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad == 0 && secs < 60.0,
        format!("{checked} partial derivatives, {bad} outside 1e-4 relative, {secs:.2} s"),
    )
}

fn laplacian_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=12);
        let mut directed = vec![Vec::new(); n];
        for row in directed.iter_mut() {
            for j in 0..n {
                if rng.random_bool(0.4) {
                    row.push((j, rng.random_range(0.01..2.0)));
                }
            }
        }
        let g = DatasetGraph::from_directed(n, GraphMethod::Knn, 1, &directed);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let l = laplacian(&g);
        let quad: f64 = (0..n)
            .map(|i| y[i] * (0..n).map(|j| l[(i, j)] * y[j]).sum::<f64>())
            .sum();
        let mut double = 0.0;
        for i in 0..n {
            for j in 0..n {
                double += 0.5 * g.weight(i, j) * (y[i] - y[j]).powi(2);
            }
        }
        worst = worst
            .max((quad - double).abs())
            .max((laplacian_quadratic(&g, &y) - double).abs());
    }
    outcome(worst <= 1e-10, format!("50 graphs, max |diff| {worst:.1e}"))
}

/// Everything criteria 6 to 10 look at, written below one directory.
struct Pipeline {
    train_accuracy: f64,
    pipeline_secs: f64,
    clean: Vec<SmoothnessSummary>,
    noisy: Vec<SmoothnessSummary>,
    leg_share: Vec<f64>,
    scratch_epochs: Option<usize>,
    finetune_epochs: Option<usize>,
    epochs: usize,
    top_third: f64,
}

const METHODS: [GraphMethod; 2] = [GraphMethod::Knn, GraphMethod::Nnk];

fn run_pipeline(root: &Path) -> Pipeline {
    let start = Instant::now();
    let manifest = commands::synth(&SynthConfig::three_class(200, 7), &root.join("data")).unwrap();
    let data = load_dataset(&manifest).unwrap();
    let cfg = commands::model_config(&data, "toy", None).unwrap();
    let hyper = Hyper {
        seed: 7,
        ..Hyper::default()
    };
    let (params, _) = commands::train_cmd(&data, &cfg, &hyper, &root.join("model")).unwrap();
    let train_accuracy = evaluate(&params, &data.skeleton, &data.sequences).unwrap();
    let clean = commands::smoothness_reports(&data, &params, &METHODS, 10, 5).unwrap();
    let pipeline_secs = start.elapsed().as_secs_f64();
    for s in &clean {
        commands::write_smoothness(s, &root.join("smoothness/clean")).unwrap();
    }

    let stack = commands::gradcam_cmd(
        &data,
        &params,
        1,
        &GradcamTarget::ClassAggregate,
        Normalization::PerLayerMax,
        &LEGS,
    )
    .unwrap();
    commands::write_gradcam(&stack, &LEGS, &root.join("gradcam")).unwrap();

    let noisy_manifests = commands::noise_cmd(&data, &[20.0], 7, &root.join("noisy")).unwrap();
    let noisy_data = load_dataset(&noisy_manifests[0]).unwrap();
    let noisy = commands::smoothness_reports(&noisy_data, &params, &METHODS, 10, 5).unwrap();
    for s in &noisy {
        commands::write_smoothness(s, &root.join("smoothness/noisy_20db")).unwrap();
    }

    let transfer =
        load_dataset(&commands::synth(&SynthConfig::transfer_classes(200, 8), &root.join("transfer")).unwrap())
            .unwrap();
    let thyper = Hyper { seed: 8, ..hyper };
    let (_, scratch) = commands::train_cmd(&transfer, &cfg, &thyper, &root.join("transfer/scratch")).unwrap();
    let (_, tuned) = commands::finetune_cmd(
        &transfer,
        &params,
        Freeze::All,
        true,
        &thyper,
        &root.join("transfer/finetune"),
    )
    .unwrap();

    let rows = commands::spectrum_cmd(&data, &data.skeleton).unwrap();
    commands::write_spectrum(&rows, &root.join("spectrum.csv")).unwrap();
    let energy: Vec<f64> = rows.iter().map(|r| r.mean_energy).collect();

    Pipeline {
        train_accuracy,
        pipeline_secs,
        clean,
        noisy,
        leg_share: stack.concentration,
        scratch_epochs: scratch.epochs_to_accuracy(0.8),
        finetune_epochs: tuned.epochs_to_accuracy(0.8),
        epochs: thyper.epochs,
        top_third: top_third_share(&energy),
    }
}

fn raw(summaries: &[SmoothnessSummary], method: GraphMethod) -> Vec<f64> {
    summaries
        .iter()
        .find(|s| s.report.method == method)
        .expect("both methods computed")
        .report
        .mean_raw_per_layer()
}

fn banded_non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= 1.1 * w[0])
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn smoothness_trend(p: &Pipeline) -> Outcome {
    let knn = raw(&p.clean, GraphMethod::Knn);
    let (first, last) = (knn[0], *knn.last().unwrap());
    outcome(
        p.train_accuracy >= 0.95 && last <= 0.5 * first && banded_non_increasing(&knn) && p.pipeline_secs < 600.0,
        format!(
            "train accuracy {:.3}, knn raw per layer {}, {:.0} s",
            p.train_accuracy,
            fmt(&knn),
            p.pipeline_secs
        ),
    )
}

fn nnk_vs_knn(p: &Pipeline) -> Outcome {
    let knn = *raw(&p.clean, GraphMethod::Knn).last().unwrap();
    let nnk = *raw(&p.clean, GraphMethod::Nnk).last().unwrap();
    outcome(nnk <= knn, format!("final layer nnk {nnk:.4} vs knn {knn:.4}"))
}

fn gradcam_localization(p: &Pipeline) -> Outcome {
    let (first, last) = (p.leg_share[0], *p.leg_share.last().unwrap());
    outcome(
        last >= 1.5 * first,
        format!("leg mass share per layer {}", fmt(&p.leg_share)),
    )
}

fn relative_change(clean: f64, noisy: f64) -> f64 {
    if clean == noisy {
        0.0
    } else if clean == 0.0 {
        f64::INFINITY
    } else {
        (noisy - clean).abs() / clean
    }
}

fn noise_robustness(p: &Pipeline) -> Outcome {
    let clean = raw(&p.clean, GraphMethod::Knn);
    let noisy = raw(&p.noisy, GraphMethod::Knn);
    let change = relative_change(*clean.last().unwrap(), *noisy.last().unwrap());
    let nnk = raw(&p.noisy, GraphMethod::Nnk);
    outcome(
        change <= 0.25 && banded_non_increasing(&noisy),
        format!(
            "knn raw at 20 dB {}, final-layer change {:.1}% (nnk at 20 dB {})",
            fmt(&noisy),
            100.0 * change,
            fmt(&nnk)
        ),
    )
}

fn transfer(p: &Pipeline) -> Outcome {
    let show = |e: Option<usize>| e.map_or(format!("not within {}", p.epochs), |e| e.to_string());
    let pass = match (p.finetune_epochs, p.scratch_epochs) {
        (Some(ft), Some(sc)) => 2 * ft <= sc,
        // A scratch run that never gets there needs more than every epoch we ran.
        (Some(ft), None) => 2 * ft <= p.epochs,
        (None, _) => false,
    };
    outcome(
        pass,
        format!(
            "epochs to 80%: head-only fine-tune {}, from scratch {}",
            show(p.finetune_epochs),
            show(p.scratch_epochs)
        ),
    )
}

fn spectral(p: &Pipeline) -> Outcome {
    let top = sym_eig(builtin_skeleton_25().normalized_adjacency())
        .unwrap()
        .max_value()
        .unwrap();
    outcome(
        (top - 1.0).abs() <= 1e-10 && p.top_third >= 0.7,
        format!("max eigenvalue {top:.12}, top-third energy share {:.3}", p.top_third),
    )
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let (fa, fb) = (files_under(a), files_under(b));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && !fa.is_empty(),
        if differing.is_empty() {
            format!("{} report files byte-identical across two runs", fa.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 DTW oracle equivalence", dtw_oracle()),
        ("2 NNLS KKT suite", nnls_kkt()),
        ("3 NNK within KNN, redundancy pruning", nnk_subset_and_pruning()),
        ("4 gradient check", gradient_check()),
        ("5 Laplacian identity", laplacian_identity()),
    ];
    for (name, o) in &results {
        report(name, o);
    }
    let work = tempfile::TempDir::new().unwrap();
    let (first_dir, second_dir) = (work.path().join("first"), work.path().join("second"));
    let p = run_pipeline(&first_dir);
    let later: Vec<(&str, Outcome)> = vec![
        ("6 smoothness trend", smoothness_trend(&p)),
        ("7 NNK vs KNN", nnk_vs_knn(&p)),
        ("8 Grad-CAM localization", gradcam_localization(&p)),
        ("9 noise robustness", noise_robustness(&p)),
        ("10 transfer", transfer(&p)),
        ("11 spectral property", spectral(&p)),
    ];
    for (name, o) in &later {
        report(name, o);
    }
    results.extend(later);
    run_pipeline(&second_dir);
    let det = ("12 determinism", determinism(&first_dir, &second_dir));
    report(det.0, &det.1);
    results.push(det);

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join("; "));
    }
    if !failed.is_empty() && std::env::var("STGG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn report(name: &str, o: &Outcome) {
    println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}
