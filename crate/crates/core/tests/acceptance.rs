//! End-to-end acceptance suite: one check per release criterion, each
//! printing a single `criterion NN …: PASS/FAIL/SKIPPED` line. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines as they
//! complete (the whole suite takes a few minutes; the ablation-ordering
//! criterion trains twelve models).

mod grad_suite;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::Ratio;
use steam_eeg_core::cnn1d::{branch_forward, AttentionParams, BranchConfig, BranchParams};
use steam_eeg_core::config::{ModelConfig, MtfSettings};
use steam_eeg_core::dataio::{load_dataset, Dataset, MultichannelSeries};
use steam_eeg_core::mtf::{
    belief_propagation, brute_force_marginals, build_region_graph, BpConfig, MtfGraph, Topology,
};
use steam_eeg_core::resnet2d::{ccsa, CcsaParams, ResNetConfig};
use steam_eeg_core::rng::StreamRng;
use steam_eeg_core::ssa::{decompose, svd, SsaConfig};
use steam_eeg_core::tensor::tape::Tape;
use steam_eeg_core::tensor::Tensor;
use steam_eeg_core::train::{
    ablate, evaluate, fit, metrics_from_confusion, save_checkpoint, synthetic_frequency_dataset,
    Checkpoint, F1Average, OptimizerKind, SynthSpec, TrainConfig,
};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

enum Verdict {
    Pass(String),
    Skip(String),
}

fn seeded(shape: &[usize], seed: u64, stream: &str) -> Tensor<f64> {
    let mut rng = StreamRng::new(seed, stream);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform::<f64>(-0.8, 0.8))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Draws a usize uniformly from `lo..=hi`.
fn pick(rng: &mut StreamRng, lo: usize, hi: usize) -> usize {
    let span = (hi - lo + 1) as f64;
    (lo + (rng.uniform::<f64>(0.0, 1.0) * span) as usize).min(hi)
}

/// The small model used by the training criteria: two attentive 1D conv
/// layers per branch, a 4-segment/4-state grid field rendered at 16×16, and
/// a two-stage attentive residual classifier.
fn acceptance_model(beta_grid: Vec<f64>, classes: usize) -> ModelConfig {
    ModelConfig {
        znormalize: true,
        ssa: Default::default(),
        branch: BranchConfig {
            layers: vec![(4, 3), (6, 3)],
            pool: 2,
            attention_dim: 4,
            attend_every_layer: false,
        },
        mtf: MtfSettings {
            segments: 4,
            states: 4,
            topology: Topology::Grid,
            beta_grid,
            bp: Default::default(),
            image_height: 16,
            image_width: 16,
        },
        resnet: ResNetConfig {
            stages: vec![(4, 1), (6, 1)],
            attention_after_stage: vec![true, true],
            attention_dim: 4,
            classes,
        },
        fusion: true,
    }
}

fn train_cfg(lr: f64, batch: usize, epochs: usize, patience: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        },
        batch_size: batch,
        epochs,
        seed,
        early_stop_patience: patience,
        ablation: Default::default(),
    }
}

fn majority_fraction(dataset: &Dataset<f64>) -> f64 {
    let mut counts = vec![0usize; dataset.label_names.len()];
    for &label in &dataset.labels {
        counts[label] += 1;
    }
    *counts.iter().max().unwrap() as f64 / dataset.len() as f64
}

// ---------------------------------------------------------------------------
// Criterion 1: decomposition completeness on fuzzed series
// ---------------------------------------------------------------------------

fn criterion_completeness() -> Verdict {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut max_n = 0usize;
    for i in 0..100u64 {
        let mut rng = StreamRng::new(2024, &format!("ssa-fuzz-{i}"));
        let n = pick(&mut rng, 16, 512);
        max_n = max_n.max(n);
        let values: Vec<f64> = (0..n)
            .map(|t| {
                let t = t as f64;
                rng.uniform::<f64>(-2.0, 2.0) + (0.07 * t).sin() + 0.01 * t
            })
            .collect();
        let series = MultichannelSeries::new(vec![values.clone()]).unwrap();
        let parts = &decompose(&series, &SsaConfig::default()).unwrap().channels[0];
        let diff: Vec<f64> = (0..n)
            .map(|t| values[t] - (parts.trend[t] + parts.seasonal[t] + parts.noise[t]))
            .collect();
        worst = worst.max(l2(&diff) / l2(&values));
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        worst <= 1e-8,
        "worst relative reconstruction residual {worst:.3e} exceeds 1e-8"
    );
    assert!(elapsed < 10.0, "100 decompositions took {elapsed:.2}s (budget 10s)");
    Verdict::Pass(format!(
        "100 series (N up to {max_n}), worst relative residual {worst:.1e}, {elapsed:.2}s"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 2: factor orthonormality and reconstruction on fuzzed matrices
// ---------------------------------------------------------------------------

fn criterion_factorization() -> Verdict {
    let mut shapes: Vec<(usize, usize)> =
        vec![(128, 128), (128, 1), (1, 128), (96, 64), (64, 96), (2, 2)];
    let mut rng = StreamRng::new(55, "svd-shapes");
    for _ in 0..24 {
        shapes.push((pick(&mut rng, 1, 128), pick(&mut rng, 1, 128)));
    }
    let mut worst_ortho = 0.0f64;
    let mut worst_recon = 0.0f64;
    for (idx, &(m, n)) in shapes.iter().enumerate() {
        let mut vals = StreamRng::new(900 + idx as u64, "svd-vals");
        let data: Vec<f64> = (0..m * n).map(|_| vals.uniform::<f64>(-1.0, 1.0)).collect();
        let fro = l2(&data);
        let out = svd(&Tensor::new(vec![m, n], data.clone()).unwrap()).unwrap();
        let r = out.rank();
        assert!(r <= m.min(n), "{m}x{n}: rank {r} exceeds min dimension");
        for i in 0..r {
            for j in i..r {
                let u: f64 = out.u_col(i).iter().zip(out.u_col(j)).map(|(a, b)| a * b).sum();
                let v: f64 = out.v_col(i).iter().zip(out.v_col(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst_ortho = worst_ortho.max((u - want).abs()).max((v - want).abs());
            }
        }
        let mut recon = vec![0.0f64; m * n];
        for k in 0..r {
            let (u, v, s) = (out.u_col(k), out.v_col(k), out.sigma[k]);
            for i in 0..m {
                for j in 0..n {
                    recon[i * n + j] += s * u[i] * v[j];
                }
            }
        }
        let resid = l2(&data
            .iter()
            .zip(&recon)
            .map(|(a, b)| a - b)
            .collect::<Vec<f64>>());
        assert!(
            resid <= 1e-10 * fro,
            "{m}x{n}: reconstruction residual {resid:.3e} exceeds 1e-10 * {fro:.3e}"
        );
        worst_recon = worst_recon.max(resid / fro);
    }
    assert!(
        worst_ortho <= 1e-10,
        "worst orthonormality deviation {worst_ortho:.3e} exceeds 1e-10"
    );
    Verdict::Pass(format!(
        "{} matrices up to 128x128, worst orthonormality {worst_ortho:.1e}, worst residual/norm {worst_recon:.1e}",
        shapes.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3: finite-difference gradient checks for every op and composite
// ---------------------------------------------------------------------------

fn criterion_gradients() -> Verdict {
    let cases = grad_suite::cases();
    let mut worst: (f64, &'static str, f64) = (0.0, "", 0.0);
    for case in &cases {
        let err = (case.run)();
        assert!(
            err <= case.tol,
            "{}: max relative gradient error {err:.3e} exceeds {:.0e}",
            case.name,
            case.tol
        );
        if err > worst.0 {
            worst = (err, case.name, case.tol);
        }
    }
    Verdict::Pass(format!(
        "{} cases, worst: {} at {:.1e} (tolerance {:.0e})",
        cases.len(),
        worst.1,
        worst.0,
        worst.2
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4: exact inference on fuzzed trees; uniform loopy grid
// ---------------------------------------------------------------------------

fn criterion_exact_inference() -> Verdict {
    let bp_cfg = BpConfig {
        max_iters: 400,
        tol: 1e-12,
        damping: 0.5,
    };
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let mut rng = StreamRng::new(4100 + i, "bp-tree");
        let n = pick(&mut rng, 2, 6);
        let states = pick(&mut rng, 2, 4);
        let edges: Vec<(usize, usize)> = (1..n)
            .map(|v| (pick(&mut rng, 0, v - 1), v))
            .collect();
        let mut graph = MtfGraph::<f64>::from_edges(n, states, &edges).unwrap();
        graph.set_uniform_beta(rng.uniform::<f64>(0.0, 1.5)).unwrap();
        let unary: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..states).map(|_| rng.uniform::<f64>(-2.0, 2.0)).collect())
            .collect();
        graph.set_unary(unary).unwrap();
        let outcome = belief_propagation(&graph, &bp_cfg).unwrap();
        assert!(outcome.converged, "tree {i} ({n} nodes) did not converge");
        let exact = brute_force_marginals(&graph).unwrap();
        for (approx, truth) in outcome.marginals.rows().iter().zip(exact.rows()) {
            for (a, b) in approx.iter().zip(truth) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(
        worst <= 1e-8,
        "worst tree marginal deviation {worst:.3e} exceeds 1e-8"
    );

    // Zero potentials on a loopy 2x2 grid: marginals must be uniform and the
    // run must report convergence.
    let zero_grid = |beta: f64| {
        let mut graph = build_region_graph::<f64>(2, 2, Topology::Grid, 3).unwrap();
        graph.set_uniform_beta(beta).unwrap();
        graph
            .set_unary(vec![vec![0.0; 3]; graph.node_count()])
            .unwrap();
        let outcome = belief_propagation(&graph, &BpConfig::default()).unwrap();
        assert!(outcome.converged, "2x2 grid (beta {beta}) did not converge");
        outcome
    };
    for row in zero_grid(0.0).marginals.rows() {
        for &p in row {
            assert!(
                (p - 1.0 / 3.0).abs() <= 1e-9,
                "zero-potential grid marginal {p} is not uniform"
            );
        }
    }
    // With coupling but no evidence the grid is still fully symmetric: every
    // corner sees the same marginal, itself symmetric under level reversal
    // (the smoothing energy only measures level distance).
    let coupled = zero_grid(0.5);
    let rows = coupled.marginals.rows();
    for row in rows {
        assert!(
            (row[0] - row[2]).abs() <= 1e-9,
            "coupled grid row {row:?} is not symmetric under level reversal"
        );
        for (a, b) in row.iter().zip(&rows[0]) {
            assert!(
                (a - b).abs() <= 1e-9,
                "coupled grid corners disagree: {row:?} vs {:?}",
                rows[0]
            );
        }
    }
    Verdict::Pass(format!(
        "200 fuzzed trees match enumeration (worst deviation {worst:.1e}); zero-potential 2x2 grid is uniform and converged"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5: attention weights and marginal rows are distributions
// ---------------------------------------------------------------------------

fn criterion_normalization() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases = 0usize;

    // 1D branch channel attention.
    for i in 0..25u64 {
        let c = 1 + (i as usize) % 5;
        let t = 12 + ((i as usize) * 5) % 17;
        let d_a = [2, 3, 5][(i as usize) % 3];
        let f_last = [3, 4, 5][(i as usize / 3) % 3];
        let config = BranchConfig {
            layers: vec![(3, 3), (f_last, 3)],
            pool: 2,
            attention_dim: d_a,
            attend_every_layer: false,
        };
        let mut tape = Tape::<f64>::new();
        let params = BranchParams {
            convs: vec![
                (
                    tape.constant(seeded(&[3, 1, 3], i, "c0.w")),
                    tape.constant(seeded(&[3], i, "c0.b")),
                ),
                (
                    tape.constant(seeded(&[f_last, 3, 3], i, "c1.w")),
                    tape.constant(seeded(&[f_last], i, "c1.b")),
                ),
            ],
            attn: vec![AttentionParams {
                w_h: tape.constant(seeded(&[d_a, f_last], i, "a.w_h")),
                b_h: tape.constant(seeded(&[d_a], i, "a.b_h")),
                w_a: tape.constant(seeded(&[d_a, 1], i, "a.w_a")),
            }],
        };
        let inputs: Vec<_> = (0..c)
            .map(|k| tape.constant(seeded(&[t], i, &format!("x{k}"))))
            .collect();
        let out = branch_forward(&mut tape, &config, &params, &inputs).unwrap();
        let weights = tape.value(out.attention);
        assert!(weights.data().iter().all(|&w| w >= 0.0), "negative branch weight");
        worst = worst.max((weights.data().iter().sum::<f64>() - 1.0).abs());
        cases += 1;
    }

    // 2D image channel attention.
    for i in 0..25u64 {
        let c = 1 + (i as usize) % 6;
        let h = 2 + (i as usize) % 5;
        let w = 2 + (i as usize / 2) % 5;
        let d_a = 2 + (i as usize) % 4;
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(seeded(&[c, h, w], 300 + i, "x"));
        let params = CcsaParams {
            w_x: tape.constant(seeded(&[d_a, 1], 300 + i, "w_x")),
            b_x: tape.constant(seeded(&[d_a], 300 + i, "b_x")),
            w_a: tape.constant(seeded(&[d_a, 1], 300 + i, "w_a")),
        };
        let (weights, attended) = ccsa(&mut tape, x, &params).unwrap();
        let wv = tape.value(weights);
        assert!(wv.data().iter().all(|&p| p >= 0.0), "negative image weight");
        assert_eq!(tape.value(attended).shape(), &[c, h, w]);
        worst = worst.max((wv.data().iter().sum::<f64>() - 1.0).abs());
        cases += 1;
    }

    // Belief-propagation marginal rows.
    for i in 0..25u64 {
        let mut rng = StreamRng::new(700 + i, "bp-field");
        let channels = pick(&mut rng, 1, 3);
        let segments = pick(&mut rng, 2, 4);
        let states = pick(&mut rng, 2, 5);
        let mut graph =
            build_region_graph::<f64>(channels, segments, Topology::Grid, states).unwrap();
        graph.set_uniform_beta(rng.uniform::<f64>(0.0, 2.0)).unwrap();
        let unary: Vec<Vec<f64>> = (0..graph.node_count())
            .map(|_| (0..states).map(|_| rng.uniform::<f64>(-3.0, 3.0)).collect())
            .collect();
        graph.set_unary(unary).unwrap();
        let outcome = belief_propagation(&graph, &BpConfig::default()).unwrap();
        outcome.marginals.validate().unwrap();
        for row in outcome.marginals.rows() {
            assert!(row.iter().all(|&p| p >= 0.0), "negative marginal");
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        cases += 1;
    }

    assert!(
        worst <= 1e-9,
        "worst normalization deviation {worst:.3e} exceeds 1e-9"
    );
    Verdict::Pass(format!(
        "{cases} fuzz cases (branch attention, image attention, marginal fields), worst |sum - 1| = {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6: metrics match the exact rational confusion-matrix formulas
// ---------------------------------------------------------------------------

fn frac(num: i64, den: i64) -> Ratio<i64> {
    if den == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(num, den)
    }
}

/// Converts an exact ratio to f64 with one correctly rounded division.
fn to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn check_metrics_against_rationals(confusion: &[Vec<usize>]) {
    let k = confusion.len();
    let total: i64 = confusion.iter().flatten().map(|&c| c as i64).sum();
    let trace: i64 = (0..k).map(|c| confusion[c][c] as i64).sum();
    let accuracy = frac(trace, total);

    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c] as i64;
        let support: i64 = confusion[c].iter().map(|&v| v as i64).sum();
        let predicted: i64 = confusion.iter().map(|row| row[c] as i64).sum();
        let p = frac(tp, predicted);
        let r = frac(tp, support);
        let sum = p + r;
        let f = if *sum.numer() == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::from_integer(2) * p * r / sum
        };
        precision.push(to_f64(p));
        recall.push(to_f64(r));
        f1.push(to_f64(f));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;

    let m = metrics_from_confusion(confusion, F1Average::Macro).unwrap();
    assert!(m.accuracy == to_f64(accuracy), "accuracy mismatch on {confusion:?}");
    assert!(m.precision == precision, "precision mismatch on {confusion:?}");
    assert!(m.recall == recall, "recall mismatch on {confusion:?}");
    assert!(m.f1 == f1, "f1 mismatch on {confusion:?}");
    assert!(m.macro_precision == mean(&precision), "macro precision mismatch");
    assert!(m.macro_recall == mean(&recall), "macro recall mismatch");
    assert!(m.macro_f1 == mean(&f1), "macro f1 mismatch");
    assert!(m.averaged_f1 == mean(&f1), "macro averaged_f1 mismatch");

    let micro = metrics_from_confusion(confusion, F1Average::Micro).unwrap();
    assert!(
        micro.averaged_f1 == to_f64(accuracy),
        "micro f1 must equal accuracy on {confusion:?}"
    );
    if k == 2 {
        let binary = metrics_from_confusion(confusion, F1Average::Binary).unwrap();
        assert!(
            binary.averaged_f1 == f1[1],
            "binary f1 must be the positive-class f1 on {confusion:?}"
        );
    }
}

fn criterion_metric_formulas() -> Verdict {
    let mut matrices: Vec<Vec<Vec<usize>>> = vec![
        vec![vec![3, 0], vec![0, 5]],                              // perfect
        vec![vec![0, 4], vec![4, 0]],                              // everything wrong
        vec![vec![0, 0], vec![3, 1]],                              // zero-support class
        vec![vec![2, 1, 0], vec![1, 9, 2], vec![0, 0, 7]],         // three classes
        vec![vec![30, 30, 30], vec![30, 30, 30], vec![30, 30, 30]], // uniform
    ];
    for i in 0..45u64 {
        let mut rng = StreamRng::new(600 + i, "confusion");
        let k = pick(&mut rng, 2, 6);
        let mut m: Vec<Vec<usize>> = (0..k)
            .map(|_| (0..k).map(|_| pick(&mut rng, 0, 30)).collect())
            .collect();
        if m.iter().flatten().all(|&v| v == 0) {
            m[0][1] = 1;
        }
        matrices.push(m);
    }
    for m in &matrices {
        check_metrics_against_rationals(m);
    }
    Verdict::Pass(format!(
        "{} confusion matrices match the exact rational formulas bit-for-bit (incl. micro and binary averaging)",
        matrices.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 7: synthetic two-class benchmark and single-batch overfit
// ---------------------------------------------------------------------------

fn criterion_synthetic_benchmark() -> Verdict {
    let started = Instant::now();
    let (train, test) =
        synthetic_frequency_dataset::<f64>(7, &SynthSpec::default()).unwrap();
    let config = acceptance_model(vec![1.0], 2);
    let result = fit(&train, &config, &train_cfg(0.005, 32, 40, 10, 42)).unwrap();
    let metrics = evaluate(&result.model, &test, F1Average::Macro).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        metrics.accuracy >= 0.95,
        "test accuracy {:.3} below 0.95",
        metrics.accuracy
    );
    assert!(elapsed < 900.0, "run took {elapsed:.0}s (budget 900s)");

    // A single batch must be memorized exactly.
    let tiny_spec = SynthSpec {
        train: 8,
        test: 2,
        ..SynthSpec::default()
    };
    let (tiny, _) = synthetic_frequency_dataset::<f64>(11, &tiny_spec).unwrap();
    let overfit = fit(&tiny, &config, &train_cfg(0.005, 8, 60, 60, 42)).unwrap();
    let memorized = overfit
        .history
        .iter()
        .find(|r| r.train_accuracy == 1.0)
        .map(|r| r.epoch);
    let epoch = memorized.expect("single batch was never fully memorized in 60 epochs");
    Verdict::Pass(format!(
        "test accuracy {:.3} (bar 0.95) in {elapsed:.1}s; single batch memorized at epoch {epoch}",
        metrics.accuracy
    ))
}

// ---------------------------------------------------------------------------
// Criterion 8: archive dataset beats the majority baseline
// ---------------------------------------------------------------------------

fn find_archive_pair() -> Option<(PathBuf, PathBuf, String)> {
    let mut roots = Vec::new();
    if let Ok(dir) = std::env::var("STEAM_EEG_DATA") {
        roots.push(PathBuf::from(dir));
    }
    roots.push(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let mut dirs = Vec::new();
    for root in roots {
        if !root.is_dir() {
            continue;
        }
        dirs.push(root.clone());
        if let Ok(entries) = fs::read_dir(&root) {
            for entry in entries.flatten() {
                if entry.path().is_dir() {
                    dirs.push(entry.path());
                }
            }
        }
    }
    for dir in dirs {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            if let Some(stem) = name.strip_suffix("_TRAIN.ts") {
                let stem = stem.to_string();
                let test = dir.join(format!("{stem}_TEST.ts"));
                if test.is_file() {
                    return Some((path, test, stem));
                }
            }
        }
    }
    None
}

/// Serializes a dataset back to `.ts` text (shortest round-trip floats).
fn to_ts_text(dataset: &Dataset<f64>) -> String {
    let univariate = dataset
        .items
        .iter()
        .all(|item| item.channels().len() == 1);
    let mut text = format!(
        "@problemName {}\n@timeStamps false\n@univariate {}\n@classLabel true {}\n@data\n",
        dataset.problem_name.as_deref().unwrap_or("mechanism"),
        univariate,
        dataset.label_names.join(" ")
    );
    for (item, &label) in dataset.items.iter().zip(&dataset.labels) {
        let dims: Vec<String> = item
            .channels()
            .iter()
            .map(|ch| {
                ch.iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        text.push_str(&format!("{}:{}\n", dims.join(":"), dataset.label_names[label]));
    }
    text
}

fn criterion_archive_benchmark() -> Verdict {
    if let Some((train_path, test_path, name)) = find_archive_pair() {
        let train: Dataset<f64> = load_dataset(&train_path).unwrap();
        let test: Dataset<f64> = load_dataset(&test_path).unwrap();
        let config = acceptance_model(vec![0.1, 1.0], train.label_names.len());
        let result = fit(&train, &config, &train_cfg(0.005, 16, 60, 15, 42)).unwrap();
        let metrics = evaluate(&result.model, &test, F1Average::Macro).unwrap();
        let majority = majority_fraction(&test);
        assert!(
            metrics.accuracy >= majority + 0.10,
            "{name}: accuracy {:.3} does not beat majority {majority:.3} by 10 points",
            metrics.accuracy
        );
        return Verdict::Pass(format!(
            "{name}: accuracy {:.3} vs majority baseline {majority:.3}",
            metrics.accuracy
        ));
    }

    // No archive present: verify the load-and-train mechanism end to end on
    // a serialized synthetic set, then report an honest skip.
    let spec = SynthSpec {
        train: 40,
        test: 20,
        ..SynthSpec::default()
    };
    let (train, test) = synthetic_frequency_dataset::<f64>(3, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("MECHANISM_TRAIN.ts");
    let test_path = dir.path().join("MECHANISM_TEST.ts");
    fs::write(&train_path, to_ts_text(&train)).unwrap();
    fs::write(&test_path, to_ts_text(&test)).unwrap();
    let train2: Dataset<f64> = load_dataset(&train_path).unwrap();
    let test2: Dataset<f64> = load_dataset(&test_path).unwrap();
    assert_eq!(train2, train, "serialized training set did not round-trip");
    assert_eq!(test2, test, "serialized test set did not round-trip");
    let config = acceptance_model(vec![1.0], 2);
    let result = fit(&train2, &config, &train_cfg(0.005, 16, 12, 12, 5)).unwrap();
    let metrics = evaluate(&result.model, &test2, F1Average::Macro).unwrap();
    let majority = majority_fraction(&test2);
    assert!(
        metrics.accuracy > majority,
        "mechanism run: accuracy {:.3} does not beat majority {majority:.3}",
        metrics.accuracy
    );
    Verdict::Skip(format!(
        "no *_TRAIN.ts/*_TEST.ts pair under $STEAM_EEG_DATA or ./data; \
         .ts round-trip + training mechanism verified instead (accuracy {:.3} vs majority {majority:.3})",
        metrics.accuracy
    ))
}

// ---------------------------------------------------------------------------
// Criterion 9: ablation deltas keep their expected order
// ---------------------------------------------------------------------------

fn criterion_ablation_ordering() -> Verdict {
    let spec = SynthSpec {
        channels: 2,
        tone_channel_by_class: true,
        cycles: (6, 6),
        train: 200,
        test: 120,
        drift: 2.0,
        noise: 0.4,
        ..SynthSpec::default()
    };
    let config = acceptance_model(vec![0.1, 1.0], 2);
    let mut ordered = 0usize;
    let mut lines = Vec::new();
    for seed in [1u64, 2, 3] {
        let (train, test) = synthetic_frequency_dataset::<f64>(seed, &spec).unwrap();
        let rows = ablate(&train, &test, &config, &train_cfg(0.005, 8, 300, 60, seed)).unwrap();
        let delta = |variant: &str| {
            rows.iter()
                .find(|r| r.variant == variant)
                .unwrap_or_else(|| panic!("missing ablation row {variant}"))
                .delta
                .abs()
        };
        let full = rows.iter().find(|r| r.variant == "full").unwrap().accuracy;
        let (d_mtf, d_ssa, d_ccsa) = (delta("no_mtf"), delta("no_ssa"), delta("no_ccsa"));
        let ok = d_mtf >= d_ssa && d_ssa >= d_ccsa;
        ordered += ok as usize;
        lines.push(format!(
            "seed {seed}: full {full:.3}, |delta| no_mtf {d_mtf:.3} / no_ssa {d_ssa:.3} / no_ccsa {d_ccsa:.3} -> {}",
            if ok { "ordered" } else { "unordered" }
        ));
    }
    assert!(
        ordered >= 2,
        "ablation order held in only {ordered}/3 runs: {}",
        lines.join("; ")
    );
    Verdict::Pass(format!("{ordered}/3 seeded runs ordered ({})", lines.join("; ")))
}

// ---------------------------------------------------------------------------
// Criterion 10: identical config and seed give bit-identical runs
// ---------------------------------------------------------------------------

fn criterion_determinism() -> Verdict {
    let spec = SynthSpec {
        train: 24,
        test: 8,
        ..SynthSpec::default()
    };
    let (train, _) = synthetic_frequency_dataset::<f64>(21, &spec).unwrap();
    let config = acceptance_model(vec![0.5, 2.0], 2);
    let tcfg = train_cfg(0.005, 8, 6, 6, 42);
    let a = fit(&train, &config, &tcfg).unwrap();
    let b = fit(&train, &config, &tcfg).unwrap();
    assert_eq!(a.history, b.history, "metric histories differ between runs");
    assert_eq!(a.beta_search, b.beta_search, "beta searches differ between runs");
    assert_eq!(a.best_epoch, b.best_epoch, "best epochs differ between runs");
    let json_a = Checkpoint::from_model(&a.model).to_json().unwrap();
    let json_b = Checkpoint::from_model(&b.model).to_json().unwrap();
    assert_eq!(json_a, json_b, "checkpoint encodings differ between runs");

    let dir = tempfile::tempdir().unwrap();
    let (path_a, path_b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_checkpoint(&a.model, &path_a).unwrap();
    save_checkpoint(&b.model, &path_b).unwrap();
    let (bytes_a, bytes_b) = (fs::read(&path_a).unwrap(), fs::read(&path_b).unwrap());
    assert_eq!(bytes_a, bytes_b, "checkpoint files differ between runs");
    Verdict::Pass(format!(
        "two runs: {} history rows identical, checkpoint files byte-identical ({} bytes)",
        a.history.len(),
        bytes_a.len()
    ))
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

fn panic_text(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic without message".to_string()
    }
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("01 decomposition completeness", criterion_completeness),
        ("02 factorization accuracy", criterion_factorization),
        ("03 gradient checks", criterion_gradients),
        ("04 exact tree inference", criterion_exact_inference),
        ("05 attention/marginal normalization", criterion_normalization),
        ("06 metric formulas", criterion_metric_formulas),
        ("07 synthetic benchmark", criterion_synthetic_benchmark),
        ("08 archive benchmark", criterion_archive_benchmark),
        ("09 ablation ordering", criterion_ablation_ordering),
        ("10 run determinism", criterion_determinism),
    ];
    let suite_start = Instant::now();
    let mut failures = Vec::new();
    println!();
    for (name, run) in criteria {
        let started = Instant::now();
        let line = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(Verdict::Pass(detail)) => format!(
                "criterion {name}: PASS — {detail} [{:.1}s]",
                started.elapsed().as_secs_f64()
            ),
            Ok(Verdict::Skip(detail)) => format!("criterion {name}: SKIPPED — {detail}"),
            Err(payload) => {
                failures.push(name);
                format!("criterion {name}: FAIL — {}", panic_text(payload))
            }
        };
        println!("{line}");
    }
    println!(
        "acceptance suite finished in {:.1}s",
        suite_start.elapsed().as_secs_f64()
    );
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
