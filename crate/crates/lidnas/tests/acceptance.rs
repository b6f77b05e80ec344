//! Acceptance suite: one test per pinned criterion, each printing a
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The toy-space results (enumeration plus a full search at the same master
//! seed) are computed once and shared by the criteria that need them.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use lidnas::config::{Preset, RunConfig};
use lidnas::evaluator::{grade, reward};
use lidnas::genome::{ConvOp, Resolution, SearchSpaceConfig, SkipOp};
use lidnas::net::{
    compile, forward, gradcheck, init_params, ActivationTrace, GraphBuilder, NetworkInstance,
    ParamStore, Tensor,
};
use lidnas::runner::{cmd_enumerate, cmd_search, EnumRow};
use lidnas::scorer::{kernel_matrix, score_codes};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn criterion(number: u8, name: &str, check: impl FnOnce()) {
    let result = catch_unwind(AssertUnwindSafe(check));
    let status = if result.is_ok() { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {number} ({name}): {status}");
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
}

fn singleton_space(channels: Vec<usize>, num_scales: u8) -> SearchSpaceConfig {
    SearchSpaceConfig {
        num_scales,
        conv_options: vec![ConvOp::Vanilla2d],
        ksize_options: vec![3],
        se_options: vec![0.0],
        skip_options: vec![SkipOp::None],
        channel_options: channels,
        repeat_options: vec![1],
        input_resolution: Resolution {
            height: 16,
            width: 16,
            channels: 3,
        },
        expansion: 3,
        block_budget: None,
    }
}

#[test]
fn criterion_1_space_size_matches_exhaustive_enumeration() {
    criterion(1, "space-size formula", || {
        for m in 1..=3usize {
            let channels: Vec<usize> = (1..=m).map(|i| 8 * i).collect();
            for num_scales in 1..=2u8 {
                let config = singleton_space(channels.clone(), num_scales);
                assert_eq!(config.per_block_size(), m as u64);
                let mut hashes = HashSet::new();
                let mut count = 0u64;
                config.for_each_genome(|g| {
                    hashes.insert(g.canonical_hash());
                    count += 1;
                });
                assert_eq!(hashes.len() as u64, count, "duplicate genomes enumerated");
                assert_eq!(
                    config.space_size(),
                    num_bigint::BigUint::from(count),
                    "M={m} S={num_scales}"
                );
            }
        }
    });
}

#[test]
fn criterion_2_param_count_matches_compiled_store() {
    criterion(2, "parameter-count oracle", || {
        let config = SearchSpaceConfig {
            input_resolution: Resolution {
                height: 16,
                width: 16,
                channels: 3,
            },
            ..SearchSpaceConfig::default()
        };
        for seed in 0..200u64 {
            let genome = config.random_genome(seed);
            let net = compile(&genome).unwrap();
            // independent element enumeration over every compiled tensor
            let store = init_params(&net, seed);
            let elements: u64 = store.tensors().iter().map(|t| t.len() as u64).sum();
            assert_eq!(genome.param_count(), elements, "seed {seed}");
        }
    });
}

/// Builds an activation code of the given length through a rectifier pass.
fn code(len: usize, rng: &mut ChaCha20Rng) -> ActivationTrace {
    let mut builder = GraphBuilder::new((1, 1, len));
    let input = builder.input();
    let out = builder.relu(input);
    let net = builder.finish(out);
    let store = init_params(&net, 0);
    let mut batch = Tensor::zeros([1, 1, 1, len]);
    for v in batch.data_mut() {
        *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let (_, traces) = forward(&net, &store, &batch, true).unwrap();
    traces.into_iter().next().unwrap()
}

fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    let mut det = 0.0;
    for (j, &head) in m[0].iter().enumerate() {
        let minor: Vec<Vec<f64>> = m[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, &v)| v)
                    .collect()
            })
            .collect();
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * head * cofactor_det(&minor);
    }
    det
}

#[test]
fn criterion_3_kernel_and_score_correctness() {
    criterion(3, "kernel/score correctness", || {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        // invariants on 1000 random code sets
        for round in 0..1000 {
            let n = rng.random_range(1..9);
            let n_a = rng.random_range(4..72);
            let codes: Vec<ActivationTrace> = (0..n).map(|_| code(n_a, &mut rng)).collect();
            let kernel = kernel_matrix(&codes).unwrap();
            for i in 0..n {
                assert_eq!(kernel.at(i, i), n_a as i64, "round {round}: diagonal");
                for j in 0..n {
                    assert_eq!(kernel.at(i, j), kernel.at(j, i), "round {round}: symmetry");
                    assert!(kernel.at(i, j) >= 0 && kernel.at(i, j) <= n_a as i64);
                }
            }
            let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| kernel.at(i, j) as f64);
            let min_eig = dense
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(
                min_eig >= -1e-8 * n_a as f64,
                "round {round}: eigenvalue {min_eig}"
            );
        }
        // log-det vs cofactor expansion for orders up to 6
        for round in 0..200 {
            let n = 2 + round % 5; // 2..=6
            let n_a = 40;
            let codes: Vec<ActivationTrace> = (0..n).map(|_| code(n_a, &mut rng)).collect();
            let kernel = kernel_matrix(&codes).unwrap();
            let dense: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| kernel.at(i, j) as f64).collect())
                .collect();
            let reference = cofactor_det(&dense);
            let report = score_codes(&codes).unwrap();
            if report.score == f64::NEG_INFINITY {
                assert!(
                    reference.abs() < 1e-6 * (n_a as f64).powi(n as i32),
                    "round {round}: singular but cofactor det {reference}"
                );
            } else {
                let expect = reference.abs().ln();
                assert!(
                    (report.score - expect).abs() <= 1e-10 * expect.abs(),
                    "round {round}: {} vs {expect}",
                    report.score
                );
            }
        }
        // the 2x2 closed form: N_A = 10, d_H = 4 -> det 64
        let a = code_with_bits(10, &[0, 1, 2, 3, 4]);
        let b = code_with_bits(10, &[0, 2, 4, 5, 6]);
        assert_eq!(a.hamming(&b).unwrap(), 4);
        let report = score_codes(&[a, b]).unwrap();
        assert!((report.score - 64f64.ln()).abs() < 1e-12);
    });
}

fn code_with_bits(len: usize, ones: &[usize]) -> ActivationTrace {
    let mut builder = GraphBuilder::new((1, 1, len));
    let input = builder.input();
    let out = builder.relu(input);
    let net = builder.finish(out);
    let store = init_params(&net, 0);
    let mut batch = Tensor::from_vec([1, 1, 1, len], vec![-1.0; len]).unwrap();
    for &i in ones {
        batch.data_mut()[i] = 1.0;
    }
    let (_, traces) = forward(&net, &store, &batch, true).unwrap();
    traces.into_iter().next().unwrap()
}

fn fill_away_from_zero(data: &mut [f64], rng: &mut ChaCha20Rng) {
    for v in data {
        let mag = 0.15 + 0.85 * rng.random::<f64>();
        *v = if rng.random::<bool>() { mag } else { -mag };
    }
}

fn gradcheck_net(net: &NetworkInstance, store: &ParamStore, batch: &Tensor, rng: &mut ChaCha20Rng) {
    let (c, h, w) = net.output_shape();
    let mut cotangent = Tensor::zeros([batch.shape()[0], c, h, w]);
    fill_away_from_zero(cotangent.data_mut(), rng);
    let (analytic, analytic_input) =
        gradcheck::analytic_grads(net, store, batch, &cotangent).unwrap();
    let numeric = gradcheck::fd_param_grads(net, store, batch, &cotangent, 1e-5);
    for (meta, (a, n)) in net.params().iter().zip(analytic.iter().zip(&numeric)) {
        let err = gradcheck::max_relative_error(a.data(), n.data());
        assert!(err < 1e-4, "{}: relative error {err}", meta.name);
    }
    let numeric_input = gradcheck::fd_input_grad(net, store, batch, &cotangent, 1e-5);
    let err = gradcheck::max_relative_error(analytic_input.data(), numeric_input.data());
    assert!(err < 1e-4, "input gradient: relative error {err}");
}

#[test]
fn criterion_4_finite_difference_gradients() {
    criterion(4, "gradient checks", || {
        let mut rng = ChaCha20Rng::seed_from_u64(4242);
        type BuildFn = fn(&mut GraphBuilder, usize) -> usize;
        let ops: Vec<(&str, BuildFn)> = vec![
            ("conv_s1", |b, x| b.conv(x, 3, 3, 1, "op")),
            ("conv_s2", |b, x| b.conv(x, 3, 3, 2, "op")),
            ("conv_k5", |b, x| b.conv(x, 2, 5, 1, "op")),
            ("depthwise_s1", |b, x| b.depthwise(x, 3, 1, "op")),
            ("depthwise_s2", |b, x| b.depthwise(x, 3, 2, "op")),
            ("relu", |b, x| {
                let c = b.conv(x, 2, 1, 1, "pre");
                b.relu(c)
            }),
            ("sigmoid", |b, x| {
                let c = b.conv(x, 2, 1, 1, "pre");
                b.sigmoid(c)
            }),
            ("global_avg_pool", |b, x| b.global_avg_pool(x)),
            ("channel_scale", |b, x| {
                let pooled = b.global_avg_pool(x);
                let fc = b.conv(pooled, 2, 1, 1, "fc");
                let gate = b.sigmoid(fc);
                b.channel_scale(x, gate)
            }),
            ("add", |b, x| {
                let c = b.conv(x, 2, 1, 1, "branch");
                b.add(c, x)
            }),
            ("channel_resize_trunc", |b, x| b.channel_resize(x, 1)),
            ("channel_resize_pad", |b, x| b.channel_resize(x, 4)),
            ("nearest_up2", |b, x| b.nearest_up2(x)),
        ];
        for (name, build) in ops {
            for instance in 0..20 {
                let mut builder = GraphBuilder::new((2, 4, 4));
                let input = builder.input();
                let out = build(&mut builder, input);
                let net = builder.finish(out);
                let mut store = init_params(&net, instance);
                for t in store.tensors_mut() {
                    fill_away_from_zero(t.data_mut(), &mut rng);
                }
                let mut batch = Tensor::zeros([2, 2, 4, 4]);
                fill_away_from_zero(batch.data_mut(), &mut rng);
                catch_unwind(AssertUnwindSafe(|| {
                    gradcheck_net(&net, &store, &batch, &mut rng)
                }))
                .unwrap_or_else(|e| {
                    eprintln!("op {name} instance {instance} failed");
                    std::panic::resume_unwind(e)
                });
            }
        }
    });
}

#[test]
fn criterion_5_grade_and_reward_worked_examples() {
    criterion(5, "grade/reward unit suite", || {
        // grade: under target, degenerate alpha, over target
        let g = grade(0.8, 1_900_000, 2_000_000, 0.6);
        assert_eq!(g.r, 0);
        assert!((g.grade - 0.88).abs() < 1e-15);

        let g = grade(0.8, 123_456_789, 2_000_000, 1.0);
        assert!((g.grade - 0.8).abs() < 1e-15);

        let g = grade(0.8, 4_000_000, 2_000_000, 0.6);
        assert_eq!(g.r, 1);
        assert!((g.grade - 0.68).abs() < 1e-15);

        // reward: neutral mutation, pure-score ratio, compactness penalty
        let r = reward(5.0, 5.0, 100, 200, 0.6);
        assert!((r.value - 1.0).abs() < 1e-15 && !r.fallback);

        let r = reward(10.0, 12.0, 999, 200, 1.0);
        assert!((r.value - 1.2).abs() < 1e-15);

        let r = reward(10.0, 11.0, 400, 200, 0.6);
        assert!((r.value - 0.86).abs() < 1e-15);

        // r-switch continuity at params == target
        let target = 1_000_000_000_000u64;
        let at = grade(0.5, target, target, 0.6);
        let above = grade(0.5, target + 1, target, 0.6);
        assert_eq!(at.r, 0);
        assert_eq!(above.r, 1);
        assert!((at.grade - above.grade).abs() <= 1e-12);
    });
}

/// Toy-space results shared by criteria 6 and 7: the exhaustive
/// enumeration and a full search, both at master seed 3.
fn toy_results() -> &'static (Vec<EnumRow>, f64) {
    static RESULTS: OnceLock<(Vec<EnumRow>, f64)> = OnceLock::new();
    RESULTS.get_or_init(|| {
        let mut config = RunConfig::default();
        Preset::Toy.apply(&mut config);
        config.seed = 3;
        let rows = cmd_enumerate(&config).expect("toy enumeration");

        let dir = tempfile::tempdir().expect("tempdir");
        config.output_dir = Some(dir.path().to_path_buf());
        let summary = cmd_search(&config).expect("toy search");
        (rows, summary.best_grade)
    })
}

#[test]
fn criterion_6_search_reaches_the_brute_force_optimum() {
    criterion(6, "ATS optimality at toy scale", || {
        let (rows, search_grade) = toy_results();
        let brute_force_max = rows
            .iter()
            .map(|r| r.grade)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            *search_grade >= 0.95 * brute_force_max,
            "search grade {search_grade} below 0.95 x {brute_force_max}"
        );
    });
}

/// Tie-aware Spearman rank correlation.
fn spearman(pairs: &[(f64, f64)]) -> f64 {
    fn ranks(values: Vec<f64>) -> Vec<f64> {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut out = vec![0.0; values.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                out[idx] = avg;
            }
            i = j + 1;
        }
        out
    }
    let xs = ranks(pairs.iter().map(|p| p.0).collect());
    let ys = ranks(pairs.iter().map(|p| p.1).collect());
    let n = pairs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum();
    let vx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn criterion_7_score_correlates_with_trained_accuracy() {
    criterion(7, "score-accuracy correlation", || {
        let (rows, _) = toy_results();
        let mut usable: Vec<&EnumRow> = rows.iter().filter(|r| !r.degenerate).collect();
        usable.sort_by(|a, b| a.score.total_cmp(&b.score));
        assert!(usable.len() >= 50);
        let selected: Vec<(f64, f64)> = usable[..25]
            .iter()
            .chain(&usable[usable.len() - 25..])
            .map(|r| (r.score, r.accuracy))
            .collect();
        let rho = spearman(&selected);
        assert!(rho > 0.0, "Spearman {rho} not positive");
    });
}

fn determinism_config(out: std::path::PathBuf, workers: usize) -> RunConfig {
    let mut config = RunConfig::default();
    Preset::Toy.apply(&mut config);
    config.seed = 11;
    config.workers = workers;
    config.search.population = 12;
    config.search.max_iterations = 3;
    config.search.patience = 2;
    config.search.children_per_step = 3;
    config.task.samples = 16;
    config.train.epochs = 3;
    config.output_dir = Some(out);
    config
}

/// Every CSV artifact (minus its timestamp line) plus the best-genome file.
/// The config snapshot is excluded: it correctly records the run's own
/// output path and worker count.
fn artifact_views(dir: &std::path::Path) -> Vec<(String, String)> {
    let mut views = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") || n == "best_genome.json" || n == "mutations.jsonl")
        .collect();
    names.sort();
    for name in names {
        let text = std::fs::read_to_string(dir.join(&name)).unwrap();
        views.push((name, lidnas::artifacts::deterministic_view(&text)));
    }
    views
}

#[test]
fn criterion_8_runs_are_byte_identical_across_workers() {
    criterion(8, "determinism", || {
        let base = tempfile::tempdir().unwrap();
        let run = |label: &str, workers: usize| {
            let out = base.path().join(label);
            cmd_search(&determinism_config(out.clone(), workers)).unwrap();
            artifact_views(&out)
        };
        let first = run("a", 1);
        let second = run("b", 1);
        let third = run("c", 3);
        assert!(!first.is_empty());
        assert_eq!(first, second, "same worker count must be byte-identical");
        assert_eq!(first, third, "worker count must not affect artifacts");
    });
}

#[test]
fn criterion_9_termination_contract() {
    criterion(9, "termination", || {
        // the published caps: 100 iterations, patience 10
        let dir = tempfile::tempdir().unwrap();
        let mut config = determinism_config(dir.path().join("full"), 0);
        config.seed = 13;
        config.search.max_iterations = 100;
        config.search.patience = 10;
        config.train.epochs = 2;
        let summary = cmd_search(&config).unwrap();
        assert!(summary.best_grade.is_finite());
        for entry in std::fs::read_dir(dir.path().join("full")).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_str().unwrap();
            if name.starts_with("trajectory-") {
                let text = std::fs::read_to_string(&path).unwrap();
                let records = text.lines().count().saturating_sub(2); // comment + header
                assert!(records <= 100, "{name} holds {records} records");
            }
        }

        // patience 1 at a constructed local optimum: alpha = 0 and an
        // unreachable target make every grade exactly 1, so each parent
        // rejects once and stops.
        let mut config = determinism_config(dir.path().join("optimum"), 0);
        config.seed = 17;
        config.search.max_iterations = 100;
        config.search.patience = 1;
        config.objective.alpha = 0.0;
        config.objective.target_params = u64::MAX;
        config.train.epochs = 2;
        cmd_search(&config).unwrap();
        let mut trajectories = 0;
        for entry in std::fs::read_dir(dir.path().join("optimum")).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            if name.starts_with("trajectory-") {
                trajectories += 1;
                let text = std::fs::read_to_string(&path).unwrap();
                let rows: Vec<&str> = text
                    .lines()
                    .skip(2)
                    .filter(|l| !l.is_empty())
                    .collect();
                assert_eq!(rows.len(), 1, "{name}: expected exactly one record");
                let fields: Vec<&str> = rows[0].split(',').collect();
                let accepted = fields[6];
                assert_eq!(accepted, "false", "{name}: the single step must reject");
            }
        }
        assert!(trajectories > 0);
    });
}
