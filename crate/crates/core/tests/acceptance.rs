//! Acceptance suite: one test per shipped acceptance criterion. Each test
//! prints a single PASS/FAIL line for its criterion (run with
//! `--nocapture` to see the lines for passing tests too).

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ligocr::dataset::WeightMode;
use ligocr::hierarchy::{train_one, HierarchyTrainOptions, ModelTarget};
use ligocr::nn::layers::{for_each_param_mut, jitter_params};
use ligocr::nn::{
    build_model, forward, grad_check, preset, softmax_rows, weighted_cross_entropy,
    ActivationKind, ForwardMode, LayerConfig, Precision, PresetName, Tensor,
};
use ligocr::permute::KPermutationIndices;
use ligocr::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion(number: u32, name: &str, body: impl FnOnce() + UnwindSafe) {
    let outcome = catch_unwind(body);
    let verdict = if outcome.is_ok() { "PASS" } else { "FAIL" };
    println!("acceptance criterion {number} ({name}): {verdict}");
    if let Err(panic) = outcome {
        resume_unwind(panic);
    }
}

fn assert_within(start: Instant, budget: Duration, what: &str) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "{what} took {elapsed:?}, over the {budget:?} budget"
    );
}

// ---------------------------------------------------------------------------
// 1. Permutation oracle

#[test]
fn criterion_1_permutation_oracle() {
    criterion(1, "permutation oracle", || {
        let start = Instant::now();
        let count = |n, k| count_permutations(PermutationRequest { n, k }).unwrap();
        assert_eq!(count(18, 2), 306);
        assert_eq!(count(18, 3), 4896);
        // exhaustive enumeration equals the closed form for all n <= 8
        for n in 0..=8usize {
            for k in 0..=n {
                let enumerated = KPermutationIndices::new(n, k).count() as u64;
                assert_eq!(
                    enumerated,
                    count(n as u64, k as u64),
                    "enumeration mismatch at n={n}, k={k}"
                );
            }
        }
        assert_within(start, Duration::from_secs(1), "permutation oracle");
    });
}

// ---------------------------------------------------------------------------
// 2. Labeling equivalence

/// Canonical partition form: labels renumbered by first occurrence, so two
/// labelings are equal iff they induce the same pixel partition.
fn normalize_labels(labels: &[u32]) -> Vec<u32> {
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    let mut next = 1u32;
    labels
        .iter()
        .map(|&l| {
            if l == 0 {
                0
            } else {
                *remap.entry(l).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            }
        })
        .collect()
}

#[test]
fn criterion_2_labeling_equivalence() {
    criterion(2, "labeling equivalence", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..1_000 {
            let pixels: Vec<u8> = (0..64 * 64)
                .map(|_| if rng.gen_bool(0.4) { 255 } else { 0 })
                .collect();
            let raster = Raster::from_pixels(64, 64, pixels);
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let (two_pass, _) = two_pass_label(&raster, conn);
                let flood = flood_fill_label(&raster, conn);
                assert_eq!(
                    normalize_labels(&two_pass.labels),
                    normalize_labels(&flood.labels),
                    "partition mismatch on case {case} with {conn:?} connectivity"
                );
            }
        }
        assert_within(start, Duration::from_secs(10), "labeling equivalence");
    });
}

// ---------------------------------------------------------------------------
// 3. Filter semantics

#[test]
fn criterion_3_filter_semantics() {
    criterion(3, "joining-flag filter semantics", || {
        let start = Instant::now();
        let alphabet = default_alphabet();
        let reps = base_form_dedup(&alphabet);
        let styles = &default_styles()[..3];
        let cc = CcSettings::default();
        for a in &reps {
            for b in &reps {
                if a.base_form_id == b.base_form_id {
                    continue;
                }
                let should_join = a.joins_forward && b.joins_backward;
                for style in styles {
                    let kept = compose_filtered(&[a, b], style, 32, cc)
                        .unwrap()
                        .is_some();
                    assert_eq!(
                        kept, should_join,
                        "pair ({}, {}) style {}: joins_forward={} joins_backward={}",
                        a.base_form_id, b.base_form_id, style.style_id,
                        a.joins_forward, b.joins_backward
                    );
                }
            }
        }
        assert_within(start, Duration::from_secs(60), "filter semantics");
    });
}

// ---------------------------------------------------------------------------
// 4. Dedup and class counts

#[test]
fn criterion_4_dedup_class_counts() {
    criterion(4, "dedup and composition-oracle class counts", || {
        let alphabet = default_alphabet();
        assert_eq!(alphabet.glyphs.len(), 38, "alphabet must ship 38 glyphs");
        let reps = base_form_dedup(&alphabet);
        assert_eq!(reps.len(), 19, "base-form dedup must yield 19 classes");

        let styles = &default_styles()[..3];
        let cc = CcSettings::default();
        let (manifest, _) =
            generate_corpus(&alphabet, styles, 3, 32, cc).unwrap();
        assert_eq!(manifest.class_counts[&1], 19);

        // brute-force oracle: independent nested-loop enumeration; a class
        // exists iff the sequence survives composition under every style
        let survives = |seq: &[&GlyphSpec]| {
            styles
                .iter()
                .all(|s| compose_filtered(seq, s, 32, cc).unwrap().is_some())
        };
        let n = reps.len();
        let mut pairs = 0usize;
        let mut triples = 0usize;
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                if survives(&[&reps[i], &reps[j]]) {
                    pairs += 1;
                }
                for k in 0..n {
                    if k == i || k == j {
                        continue;
                    }
                    if survives(&[&reps[i], &reps[j], &reps[k]]) {
                        triples += 1;
                    }
                }
            }
        }
        assert_eq!(manifest.class_counts[&2], pairs, "degree-2 class count");
        assert_eq!(manifest.class_counts[&3], triples, "degree-3 class count");
    });
}

// ---------------------------------------------------------------------------
// 5. Gradient checks

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    Tensor::from_data(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn check_stack(name: &str, configs: &[LayerConfig], input_hwc: (usize, usize, usize)) {
    let mut layers = build_model(configs, input_hwc, 0xACCE).unwrap();
    jitter_params(&mut layers, 0x51EE, 0.05);
    let (h, w, c) = input_hwc;
    let input = random_input(&[2, h, w, c], 5);
    let report = grad_check(&mut layers, &input, &[0, 2], &[1.0, 2.0, 0.5], Precision::F64, 9)
        .unwrap();
    assert!(
        report.passed,
        "{name}: max relative error {:e} over {} coords",
        report.max_rel_err, report.checked
    );
}

#[test]
fn criterion_5_gradient_checks() {
    criterion(5, "gradient checks (layers and presets)", || {
        let start = Instant::now();
        let head = [LayerConfig::Dense { units: 3 }, LayerConfig::Softmax];
        let gap_head = [
            LayerConfig::GlobalAveragePool,
            LayerConfig::Dense { units: 3 },
            LayerConfig::Softmax,
        ];
        let with_head = |layer: LayerConfig, pooled: bool| -> Vec<LayerConfig> {
            let mut v = vec![layer];
            v.extend_from_slice(if pooled { &gap_head } else { &head });
            v
        };
        // each layer type in isolation (minimal classification head added
        // so a scalar loss exists)
        check_stack(
            "conv2d",
            &with_head(
                LayerConfig::Conv2d {
                    filters: 4,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: 1,
                },
                true,
            ),
            (6, 6, 2),
        );
        for (name, act) in [
            ("relu", ActivationKind::Relu),
            ("leaky-relu", ActivationKind::LeakyRelu(0.1)),
            ("srelu", ActivationKind::Srelu),
        ] {
            check_stack(name, &with_head(LayerConfig::Activation(act), false), (3, 3, 2));
        }
        check_stack(
            "maxpool",
            &with_head(
                LayerConfig::MaxPool {
                    pool: (2, 2),
                    stride: (2, 2),
                },
                true,
            ),
            (6, 6, 2),
        );
        check_stack(
            "global-average-pool",
            &with_head(LayerConfig::GlobalAveragePool, false),
            (4, 4, 3),
        );
        check_stack(
            "dropout",
            &with_head(LayerConfig::Dropout { rate: 0.5 }, false),
            (3, 3, 2),
        );
        check_stack("dense", &head.to_vec(), (2, 2, 2));
        check_stack(
            "residual-identity",
            &with_head(
                LayerConfig::Residual {
                    inner: vec![
                        LayerConfig::Conv2d {
                            filters: 2,
                            kernel: (3, 3),
                            stride: (1, 1),
                            padding: 1,
                        },
                        LayerConfig::Activation(ActivationKind::Srelu),
                    ],
                    projection: false,
                },
                true,
            ),
            (5, 5, 2),
        );
        check_stack(
            "residual-projection",
            &with_head(
                LayerConfig::Residual {
                    inner: vec![
                        LayerConfig::Conv2d {
                            filters: 4,
                            kernel: (3, 3),
                            stride: (2, 2),
                            padding: 1,
                        },
                        LayerConfig::Activation(ActivationKind::LeakyRelu(0.1)),
                    ],
                    projection: true,
                },
                true,
            ),
            (6, 6, 2),
        );

        // all four shipped presets at 8x8 input
        for name in PresetName::ALL {
            let classes = match name {
                PresetName::Level0 => 3,
                _ => 5,
            };
            let spec = preset(name, 8, classes).unwrap();
            let mut layers = build_model(&spec.layers, (8, 8, 1), 0xABCD).unwrap();
            jitter_params(&mut layers, 0x51EE, 0.05);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let input = Tensor::from_data(
                &[2, 8, 8, 1],
                (0..2 * 64).map(|_| rng.gen_range(0.0..1.0)).collect(),
            );
            let report = grad_check(
                &mut layers,
                &input,
                &[0, 1],
                &vec![1.0; classes],
                Precision::F64,
                0,
            )
            .unwrap();
            assert!(
                report.passed,
                "preset {}: max relative error {:e}",
                name.as_str(),
                report.max_rel_err
            );
        }
        assert_within(start, Duration::from_secs(60), "gradient checks");
    });
}

// ---------------------------------------------------------------------------
// 6. Loss / softmax / residual properties

#[test]
fn criterion_6_loss_softmax_residual_properties() {
    criterion(6, "loss, softmax, and residual properties", || {
        let logits = Tensor::from_data(
            &[3, 4],
            vec![
                0.3, -1.2, 2.0, 0.1, //
                -0.5, 0.9, 0.0, 1.4, //
                3.0, 2.5, -2.0, 0.7,
            ],
        );
        let probs = softmax_rows(&logits);

        // rows sum to 1 within 1e-12
        for row in 0..3 {
            let sum: f64 = probs.data()[row * 4..(row + 1) * 4].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {row} sums to {sum}");
        }

        // shift invariance within 1e-12
        let shifted = Tensor::from_data(
            &[3, 4],
            logits.data().iter().map(|&x| x + 7.25).collect::<Vec<_>>(),
        );
        let probs_shifted = softmax_rows(&shifted);
        for (a, b) in probs.data().iter().zip(probs_shifted.data()) {
            assert!((a - b).abs() < 1e-12, "shift changed {a} to {b}");
        }

        // uniform-weight loss equals the unweighted mean NLL within 1e-12
        let targets = [2usize, 3, 0];
        let (weighted, _) = weighted_cross_entropy(&probs, &targets, &[1.0; 4]);
        let unweighted: f64 = targets
            .iter()
            .enumerate()
            .map(|(bi, &t)| -probs.data()[bi * 4 + t].ln())
            .sum::<f64>()
            / targets.len() as f64;
        assert!(
            (weighted - unweighted).abs() < 1e-12,
            "weighted {weighted} vs unweighted {unweighted}"
        );

        // residual block with zeroed inner parameters is exactly identity
        let mut layers = build_model(
            &[LayerConfig::Residual {
                inner: vec![
                    LayerConfig::Conv2d {
                        filters: 3,
                        kernel: (3, 3),
                        stride: (1, 1),
                        padding: 1,
                    },
                    LayerConfig::Activation(ActivationKind::Srelu),
                ],
                projection: false,
            }],
            (4, 4, 3),
            17,
        )
        .unwrap();
        for_each_param_mut(&mut layers, &mut |t| {
            for v in t.data_mut() {
                *v = 0.0;
            }
        });
        let input = random_input(&[2, 4, 4, 3], 6);
        let (out, _) = forward(&layers, &input, ForwardMode::Infer, Precision::F64);
        assert_eq!(out.shape(), input.shape());
        assert_eq!(out.data(), input.data(), "residual must be bit-exact identity");
    });
}

// ---------------------------------------------------------------------------
// 7. Metrics oracle

#[test]
fn criterion_7_metrics_oracle() {
    criterion(7, "metrics oracle", || {
        let confusion: Vec<Vec<usize>> =
            vec![vec![5, 0, 0], vec![0, 4, 1], vec![0, 2, 3]];
        let report = metrics_from_confusion(&confusion);

        // independent brute-force tally over the implied (true, pred) pairs
        let mut pairs = Vec::new();
        for (t, row) in confusion.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    pairs.push((t, p));
                }
            }
        }
        let total = pairs.len() as f64;
        let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
        let accuracy = correct / total;
        let classes = confusion.len();
        let (mut prec_sum, mut rec_sum, mut f1_sum) = (0.0, 0.0, 0.0);
        for c in 0..classes {
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
            let pred_c = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
            let true_c = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
            let precision = if pred_c == 0.0 { 0.0 } else { tp / pred_c };
            let recall = if true_c == 0.0 { 0.0 } else { tp / true_c };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            prec_sum += precision;
            rec_sum += recall;
            f1_sum += f1;
        }
        let k = classes as f64;
        assert!((report.accuracy - accuracy).abs() < 1e-12);
        assert!((report.macro_precision - prec_sum / k).abs() < 1e-12);
        assert!((report.macro_recall - rec_sum / k).abs() < 1e-12);
        assert!((report.macro_f1 - f1_sum / k).abs() < 1e-12);
        assert_eq!(report.total, pairs.len());
        assert_eq!(report.confusion, confusion);
    });
}

// ---------------------------------------------------------------------------
// 8. Desk-scale end-to-end

#[test]
fn criterion_8_desk_scale_end_to_end() {
    criterion(8, "desk-scale end-to-end training", || {
        let start = Instant::now();
        let alphabet = default_alphabet();
        let styles = &default_styles()[..3];
        let (mut manifest, rasters) =
            generate_corpus(&alphabet, styles, 3, 32, CcSettings::default()).unwrap();
        split_corpus(&mut manifest, 0.2, 7).unwrap();

        // small-corpus settings: minibatches of 8 so each epoch provides
        // enough optimizer steps, and a faster level-0 learning rate
        let base = HierarchyTrainOptions {
            seed: 7,
            batch_size: Some(8),
            level0_weights: WeightMode::Preset,
            ..Default::default()
        };

        let level0 = train_one(
            &manifest,
            &rasters,
            ModelTarget::Level0,
            &HierarchyTrainOptions {
                level0_epochs: Some(10),
                learning_rate: Some(0.01),
                ..base.clone()
            },
        )
        .unwrap();
        assert!(level0.history.len() <= 10);
        assert!(
            level0.best_val_accuracy >= 0.95,
            "level-0 validation accuracy {} below 0.95",
            level0.best_val_accuracy
        );

        let degree1 = train_one(
            &manifest,
            &rasters,
            ModelTarget::Degree(1),
            &HierarchyTrainOptions {
                degree_epochs: Some(25),
                ..base.clone()
            },
        )
        .unwrap();
        assert!(degree1.history.len() <= 25);
        assert!(
            degree1.best_val_accuracy >= 0.90,
            "degree-1 validation accuracy {} below 0.90",
            degree1.best_val_accuracy
        );

        // quick leaf models for degrees 2 and 3 so the assembled tree can be
        // exercised; path validity is independent of their accuracy
        let quick = HierarchyTrainOptions {
            degree_epochs: Some(1),
            ..base.clone()
        };
        let degree2 = train_one(&manifest, &rasters, ModelTarget::Degree(2), &quick).unwrap();
        let degree3 = train_one(&manifest, &rasters, ModelTarget::Degree(3), &quick).unwrap();

        let model = HierarchicalModel {
            level0: level0.layers,
            degrees: vec![1, 2, 3],
            level1: BTreeMap::from([
                (1u8, degree1.layers),
                (2u8, degree2.layers),
                (3u8, degree3.layers),
            ]),
            input_px: 32,
        };
        // every hierarchical prediction satisfies path validity: the class
        // must come from the classifier of the routed degree
        for (entry, raster) in manifest.samples.iter().zip(&rasters) {
            if entry.split != Split::Val {
                continue;
            }
            let p = predict(&model, raster);
            assert!(
                model.degrees.contains(&p.degree),
                "predicted degree {} is not in the tree",
                p.degree
            );
            let classes = manifest.class_counts[&p.degree];
            assert!(
                (p.class_id as usize) < classes,
                "class {} out of range for degree {} with {} classes",
                p.class_id, p.degree, classes
            );
            assert_eq!(p.level0_probs.len(), model.degrees.len());
            assert_eq!(p.level1_probs.len(), classes);
        }
        assert_within(start, Duration::from_secs(600), "desk-scale end-to-end");
    });
}

// ---------------------------------------------------------------------------
// 9. Reproducibility

fn run_cli(args: &[&str]) {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_ligocr"))
        .args(args)
        .status()
        .expect("failed to launch the CLI");
    assert!(status.success(), "ligocr {args:?} exited with {status}");
}

/// Sorted relative paths of every file under `dir`.
fn file_listing(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

fn assert_dirs_identical(a: &Path, b: &Path) {
    let files = file_listing(a);
    assert_eq!(files, file_listing(b), "file sets differ");
    for rel in files {
        let left = std::fs::read(a.join(&rel)).unwrap();
        let right = std::fs::read(b.join(&rel)).unwrap();
        assert_eq!(left, right, "{} differs between runs", rel.display());
    }
}

#[test]
fn criterion_9_reproducibility() {
    criterion(9, "deterministic reproducibility", || {
        let root = tempfile::tempdir().unwrap();
        for run in ["a", "b"] {
            let corpus = root.path().join(run).join("corpus");
            let models = root.path().join(run).join("models");
            run_cli(&[
                "gen-dataset",
                "--out",
                corpus.to_str().unwrap(),
                "--size",
                "32",
                "--styles",
                "3",
                "--max-degree",
                "3",
                "--seed",
                "11",
                "--deterministic",
            ]);
            run_cli(&[
                "train",
                "--corpus",
                corpus.to_str().unwrap(),
                "--out",
                models.to_str().unwrap(),
                "--hierarchy",
                "--epochs",
                "1",
                "--batch",
                "8",
                "--seed",
                "11",
                "--deterministic",
            ]);
        }
        assert_dirs_identical(&root.path().join("a"), &root.path().join("b"));
    });
}
