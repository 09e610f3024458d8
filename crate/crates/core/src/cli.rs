//! Command-line entry point wiring the pipeline end to end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 training divergence.

use crate::alphabet::{default_alphabet, default_styles, load_alphabet, write_alphabet};
use crate::ccl::{two_pass_label, Connectivity};
use crate::dataset::{
    generate_corpus, load_corpus, save_corpus, split_corpus, AugmentParams, CcSettings,
    CorpusError, Split,
};
use crate::hierarchy::{
    class_key_table, evaluate_hierarchy, load_hierarchy, predict, save_hierarchy, train_hierarchy,
    train_one, write_confusion_csv, write_histories, write_metrics_csv, HierarchyError,
    HierarchyTrainOptions, ModelTarget,
};
use crate::nn::{
    build_model, grad_check, preset, NnError, Precision, PresetName, Tensor,
};
use crate::raster::read_pgm;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

/// Environment variable giving the default output directory.
pub const OUT_DIR_ENV: &str = "LIGOCR_OUT";

#[derive(Parser)]
#[command(
    name = "ligocr",
    version,
    about = "Synthetic ligature corpus generation and hierarchical CNN classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Seed for all randomness in this command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Force single-threaded execution for byte-identical outputs.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default alphabet document.
    GenAlphabet {
        /// Output file (default: <out dir>/alphabet.txt).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate, filter, split, and persist a corpus.
    GenDataset {
        /// Alphabet document to use (default: the built-in alphabet).
        #[arg(long)]
        alphabet: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of styles to render (prefix of the shipped style set).
        #[arg(long, default_value_t = 3)]
        styles: usize,
        /// Highest character degree to compose (1..=3).
        #[arg(long, default_value_t = 3)]
        max_degree: u8,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 100)]
        size: usize,
        /// Fraction of each class reserved for validation.
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Print connected-component statistics for one image.
    InspectCc {
        /// Image file (binary PGM).
        image: PathBuf,
        /// Pixel connectivity: 4 or 8.
        #[arg(long, default_value_t = 8)]
        connectivity: u8,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model or the whole hierarchy on a persisted corpus.
    Train {
        /// Corpus directory (from gen-dataset).
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for model files and history CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train all four models and assemble the tree.
        #[arg(long)]
        hierarchy: bool,
        /// Hierarchy level of the single model to train (0 or 1).
        #[arg(long)]
        level: Option<u8>,
        /// Degree of the level-1 model to train (1..=3).
        #[arg(long)]
        degree: Option<u8>,
        /// Architecture preset override (level0, degree1, degree2, degree3).
        #[arg(long)]
        preset: Option<String>,
        /// Epoch count override.
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning-rate override.
        #[arg(long)]
        lr: Option<f64>,
        /// Minibatch-size override.
        #[arg(long)]
        batch: Option<usize>,
        /// Expected image size; must match the corpus.
        #[arg(long)]
        size: Option<usize>,
        /// Enable on-the-fly augmentation (rotation/zoom).
        #[arg(long)]
        augment: bool,
        /// Print one progress line per epoch.
        #[arg(long)]
        verbose: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained hierarchy and emit the metrics CSVs.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory holding the trained model files.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which split to evaluate: train, val, or all.
        #[arg(long, default_value = "val")]
        split: String,
        #[command(flatten)]
        common: Common,
    },
    /// Classify one image file with a trained hierarchy.
    Predict {
        #[arg(long)]
        models: PathBuf,
        /// Image file (binary PGM).
        image: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the finite-difference gradient check on a shipped preset.
    Gradcheck {
        /// Preset to check (level0, degree1, degree2, degree3).
        #[arg(long, default_value = "level0")]
        preset: String,
        /// Square input size in pixels.
        #[arg(long, default_value_t = 8)]
        size: usize,
        /// Number of output classes.
        #[arg(long)]
        classes: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::alphabet::AlphabetError> for CliError {
    fn from(e: crate::alphabet::AlphabetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::raster::PgmError> for CliError {
    fn from(e: crate::raster::PgmError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<HierarchyError> for CliError {
    fn from(e: HierarchyError) -> Self {
        match &e {
            HierarchyError::Training {
                source: NnError::Divergence { .. },
                ..
            }
            | HierarchyError::Nn(NnError::Divergence { .. }) => {
                CliError::Divergence(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn apply_determinism(common: &Common) {
    if common.deterministic {
        // single worker thread; ignore the error if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
}

/// Parses and runs one invocation; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenAlphabet { out, common } => {
            apply_determinism(&common);
            let path = match out {
                Some(p) => p,
                None => out_dir(None).join("alphabet.txt"),
            };
            let alphabet = default_alphabet();
            std::fs::write(&path, write_alphabet(&alphabet))
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            println!(
                "wrote {} glyphs ({} base forms) to {}",
                alphabet.glyphs.len(),
                crate::alphabet::base_form_dedup(&alphabet).len(),
                path.display()
            );
            Ok(())
        }
        Command::GenDataset {
            alphabet,
            out,
            styles,
            max_degree,
            size,
            val_fraction,
            common,
        } => {
            apply_determinism(&common);
            let all_styles = default_styles();
            if styles == 0 || styles > all_styles.len() {
                return Err(CliError::Usage(format!(
                    "--styles must be in 1..={}",
                    all_styles.len()
                )));
            }
            let alphabet = match alphabet {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    load_alphabet(&text)?
                }
                None => default_alphabet(),
            };
            let dir = out_dir(out);
            let (mut manifest, rasters) = generate_corpus(
                &alphabet,
                &all_styles[..styles],
                max_degree,
                size,
                CcSettings::default(),
            )?;
            split_corpus(&mut manifest, val_fraction, common.seed)?;
            save_corpus(&manifest, &rasters, &dir)?;
            for (degree, count) in &manifest.class_counts {
                println!("degree {degree}: {count} classes");
            }
            println!(
                "wrote {} samples to {}",
                manifest.samples.len(),
                dir.display()
            );
            Ok(())
        }
        Command::InspectCc {
            image,
            connectivity,
            common,
        } => {
            apply_determinism(&common);
            let connectivity = match connectivity {
                4 => Connectivity::Four,
                8 => Connectivity::Eight,
                other => {
                    return Err(CliError::Usage(format!(
                        "--connectivity must be 4 or 8, got {other}"
                    )))
                }
            };
            let raster = read_pgm(&image)?;
            let (labels, stats) = two_pass_label(&raster, connectivity);
            println!(
                "{}: {}x{} pixels, {} components ({:?})",
                image.display(),
                raster.width(),
                raster.height(),
                labels.component_count(),
                connectivity
            );
            for s in &stats {
                println!(
                    "  component {}: area {}, bbox ({},{})-({},{}), centroid ({:.2},{:.2})",
                    s.label,
                    s.area,
                    s.bbox.0,
                    s.bbox.1,
                    s.bbox.2,
                    s.bbox.3,
                    s.centroid.0,
                    s.centroid.1
                );
            }
            Ok(())
        }
        Command::Train {
            corpus,
            out,
            hierarchy,
            level,
            degree,
            preset,
            epochs,
            lr,
            batch,
            size,
            augment,
            verbose,
            common,
        } => {
            apply_determinism(&common);
            let target = resolve_train_target(hierarchy, level, degree)?;
            let preset_override = preset
                .map(|p| {
                    p.parse::<PresetName>()
                        .map_err(CliError::Usage)
                })
                .transpose()?;
            let dir = out_dir(out);
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            let (manifest, rasters) = load_corpus(&corpus)?;
            if let Some(size) = size {
                if size != manifest.image_px {
                    return Err(CliError::Usage(format!(
                        "--size {size} does not match the corpus image size {}",
                        manifest.image_px
                    )));
                }
            }
            let options = HierarchyTrainOptions {
                seed: common.seed,
                level0_epochs: epochs,
                degree_epochs: epochs,
                learning_rate: lr,
                batch_size: batch,
                preset_override,
                augment: augment.then(|| AugmentParams {
                    rotation_max: 10.0,
                    zoom_range: (0.9, 1.1),
                    flip_horizontal: false,
                    seed: common.seed,
                }),
                precision: Precision::F64,
                level0_weights: crate::dataset::WeightMode::Preset,
                verbose,
                ..Default::default()
            };
            match target {
                None => {
                    let outcome = train_hierarchy(&manifest, &rasters, &options)?;
                    save_hierarchy(&dir, &outcome.model, &class_key_table(&manifest))?;
                    write_histories(&dir, &outcome.histories)?;
                    for (name, acc) in &outcome.best_val_accuracy {
                        println!("{name}: best validation accuracy {acc:.4}");
                    }
                    println!("hierarchy written to {}", dir.display());
                }
                Some(target) => {
                    let trained = train_one(&manifest, &rasters, target, &options)?;
                    let key = target.key();
                    let px = manifest.image_px;
                    crate::nn::io::save_model(
                        &dir.join(format!("model_{key}.ucnn")),
                        &trained.layers,
                        (px, px, 1),
                        Precision::F64,
                    )?;
                    crate::nn::train::write_history_csv(
                        &dir.join(format!("history_{key}.csv")),
                        &trained.history,
                    )?;
                    println!(
                        "{key}: best validation accuracy {:.4} (epoch {})",
                        trained.best_val_accuracy, trained.best_epoch
                    );
                }
            }
            Ok(())
        }
        Command::Eval {
            corpus,
            models,
            out,
            split,
            common,
        } => {
            apply_determinism(&common);
            let split = match split.as_str() {
                "train" => Some(Split::Train),
                "val" => Some(Split::Val),
                "all" => None,
                other => {
                    return Err(CliError::Usage(format!(
                        "--split must be train, val, or all, got '{other}'"
                    )))
                }
            };
            let dir = out_dir(out);
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            let (manifest, rasters) = load_corpus(&corpus)?;
            let (model, _) = load_hierarchy(&models)?;
            let report = evaluate_hierarchy(&model, &manifest, &rasters, split);
            write_metrics_csv(&dir.join("metrics.csv"), &report)?;
            write_confusion_csv(&dir.join("confusion_level0.csv"), "level0", &report.level0)?;
            for (d, m) in &report.per_degree {
                write_confusion_csv(
                    &dir.join(format!("confusion_degree{d}.csv")),
                    &format!("degree{d}"),
                    m,
                )?;
            }
            println!(
                "level0: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                report.level0.accuracy,
                report.level0.macro_precision,
                report.level0.macro_recall,
                report.level0.macro_f1
            );
            for (d, m) in &report.per_degree {
                println!(
                    "degree{d}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                    m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
                );
            }
            println!("joint accuracy: {:.4}", report.joint_accuracy);
            println!("reports written to {}", dir.display());
            Ok(())
        }
        Command::Predict {
            models,
            image,
            common,
        } => {
            apply_determinism(&common);
            let (model, index) = load_hierarchy(&models)?;
            let raster = read_pgm(&image)?;
            let p = predict(&model, &raster);
            let class_key = index
                .class_keys
                .get(&p.degree)
                .and_then(|keys| keys.get(p.class_id as usize))
                .map(|key| {
                    key.iter()
                        .map(|id| id.to_string())
                        .collect::<Vec<_>>()
                        .join("-")
                })
                .unwrap_or_else(|| "?".to_string());
            println!("degree: {}", p.degree);
            println!("class_id: {}", p.class_id);
            println!("class_key: {class_key}");
            println!(
                "level0_probs: [{}]",
                p.level0_probs
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "level1_probs: [{}]",
                p.level1_probs
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            Ok(())
        }
        Command::Gradcheck {
            preset: preset_name,
            size,
            classes,
            common,
        } => {
            apply_determinism(&common);
            let name: PresetName = preset_name.parse().map_err(CliError::Usage)?;
            let classes = classes.unwrap_or(match name {
                PresetName::Level0 => 3,
                _ => 5,
            });
            let spec = preset(name, size, classes)?;
            let mut layers = build_model(&spec.layers, (size, size, 1), common.seed ^ 0xABCD)?;
            // move activations off their kinks so the loss is smooth at
            // the evaluation point (central differences assume smoothness)
            crate::nn::layers::jitter_params(&mut layers, common.seed ^ 0x51EE, 0.05);
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let batch = 2usize;
            let input = Tensor::from_data(
                &[batch, size, size, 1],
                (0..batch * size * size)
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect(),
            );
            let targets: Vec<usize> = (0..batch).map(|i| i % classes).collect();
            let report = grad_check(
                &mut layers,
                &input,
                &targets,
                &vec![1.0; classes],
                Precision::F64,
                common.seed,
            )?;
            println!(
                "preset {} at {size}x{size}: max relative error {:.3e} over {} of {} parameters",
                name.as_str(),
                report.max_rel_err,
                report.checked,
                report.total_params
            );
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Data(format!(
                    "gradient check failed: max relative error {:.3e} >= 1e-4",
                    report.max_rel_err
                )))
            }
        }
    }
}

/// None means the whole hierarchy; enforces the --level/--degree grammar.
fn resolve_train_target(
    hierarchy: bool,
    level: Option<u8>,
    degree: Option<u8>,
) -> Result<Option<ModelTarget>, CliError> {
    if hierarchy {
        if level.is_some() || degree.is_some() {
            return Err(CliError::Usage(
                "--hierarchy cannot be combined with --level/--degree".into(),
            ));
        }
        return Ok(None);
    }
    match (level, degree) {
        (Some(0), None) => Ok(Some(ModelTarget::Level0)),
        (Some(0), Some(_)) => Err(CliError::Usage(
            "--degree is only valid with --level 1".into(),
        )),
        (Some(1), Some(d @ 1..=3)) => Ok(Some(ModelTarget::Degree(d))),
        (Some(1), Some(d)) => Err(CliError::Usage(format!("--degree {d} outside 1..=3"))),
        (Some(1), None) => Err(CliError::Usage(
            "--level 1 requires --degree (1..=3)".into(),
        )),
        (Some(l), _) => Err(CliError::Usage(format!("--level {l} must be 0 or 1"))),
        (None, Some(d @ 1..=3)) => Ok(Some(ModelTarget::Degree(d))),
        (None, Some(d)) => Err(CliError::Usage(format!("--degree {d} outside 1..=3"))),
        (None, None) => Err(CliError::Usage(
            "specify --hierarchy, --level 0, or --level 1 --degree D".into(),
        )),
    }
}
