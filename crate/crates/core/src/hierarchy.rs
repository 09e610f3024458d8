//! Two-level tree-structured classifier: a level-0 model predicts a
//! component's character degree, then routes the image to that degree's
//! level-1 component classifier. The four models train independently.

use crate::dataset::{
    augment, compute_class_weights, AugmentParams, ClassWeights, CorpusManifest, Split,
    WeightMode, WeightTarget,
};
use crate::nn::train::write_history_csv;
use crate::nn::{
    build_model, forward, preset, train, EpochStats, ForwardMode, LayerKind, NnError, Precision,
    PresetName, TrainConfig,
};
use crate::raster::Raster;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HierarchyError {
    #[error("corpus has no samples of degree {0}")]
    MissingDegree(u8),
    #[error("corpus has no {0:?} split; run the splitter first")]
    MissingSplit(Split),
    #[error("training {model} failed: {source}")]
    Training {
        model: String,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The assembled tree: one degree classifier plus one component
/// classifier per degree, all sharing the input size.
#[derive(Debug, Clone)]
pub struct HierarchicalModel {
    pub level0: Vec<LayerKind>,
    /// Degrees present, ascending; level-0 class i means degrees[i].
    pub degrees: Vec<u8>,
    pub level1: BTreeMap<u8, Vec<LayerKind>>,
    pub input_px: usize,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub degree: u8,
    pub class_id: u32,
    pub level0_probs: Vec<f64>,
    pub level1_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    /// Degree classification over all samples.
    pub level0: MetricsReport,
    /// Component classification per degree, conditioned on the true degree.
    pub per_degree: BTreeMap<u8, MetricsReport>,
    /// Fraction of samples where both the routed degree and the class
    /// predicted by the routed model are correct (end-to-end).
    pub joint_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct HierarchyTrainOptions {
    pub seed: u64,
    /// Overrides the per-preset epoch defaults when set.
    pub level0_epochs: Option<usize>,
    pub degree_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    /// Overrides the preset minibatch size; useful on small corpora where
    /// the default would yield too few optimizer steps per epoch.
    pub batch_size: Option<usize>,
    /// Replaces the target's default architecture preset (single-model
    /// training only).
    pub preset_override: Option<PresetName>,
    pub augment: Option<AugmentParams>,
    pub precision: Precision,
    pub level0_weights: WeightMode,
    pub verbose: bool,
}

impl Default for HierarchyTrainOptions {
    fn default() -> Self {
        HierarchyTrainOptions {
            seed: 0,
            level0_epochs: None,
            degree_epochs: None,
            learning_rate: None,
            batch_size: None,
            preset_override: None,
            augment: None,
            precision: Precision::F64,
            level0_weights: WeightMode::Preset,
            verbose: false,
        }
    }
}

/// Which of the four sub-models to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTarget {
    Level0,
    Degree(u8),
}

impl ModelTarget {
    pub fn key(&self) -> String {
        match self {
            ModelTarget::Level0 => "level0".to_string(),
            ModelTarget::Degree(d) => format!("degree{d}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HierarchyTrainOutcome {
    pub model: HierarchicalModel,
    /// Histories keyed by model name: "level0", "degree1", ...
    pub histories: BTreeMap<String, Vec<EpochStats>>,
    pub best_val_accuracy: BTreeMap<String, f64>,
}

/// Pixel values scaled to [0, 1].
pub fn raster_to_input(raster: &Raster) -> Vec<f64> {
    raster.pixels().iter().map(|&p| p as f64 / 255.0).collect()
}

fn weights_to_vec(weights: &ClassWeights, keys: &[u32]) -> Vec<f64> {
    keys.iter().map(|&k| weights.get(k)).collect()
}

struct SplitData {
    train_idx: Vec<usize>,
    train_labels: Vec<usize>,
    val_samples: Vec<Vec<f64>>,
    val_labels: Vec<usize>,
}

/// Collects (train indices, labels) and materialized validation samples
/// for one sub-model; `label_of` maps a sample to its dense class index.
fn collect_split(
    manifest: &CorpusManifest,
    rasters: &[Raster],
    keep: impl Fn(&crate::dataset::SampleEntry) -> bool,
    label_of: impl Fn(&crate::dataset::SampleEntry) -> usize,
) -> SplitData {
    let mut data = SplitData {
        train_idx: Vec::new(),
        train_labels: Vec::new(),
        val_samples: Vec::new(),
        val_labels: Vec::new(),
    };
    for (i, s) in manifest.samples.iter().enumerate() {
        if !keep(s) {
            continue;
        }
        match s.split {
            Split::Train => {
                data.train_idx.push(i);
                data.train_labels.push(label_of(s));
            }
            Split::Val => {
                data.val_samples.push(raster_to_input(&rasters[i]));
                data.val_labels.push(label_of(s));
            }
        }
    }
    data
}

#[allow(clippy::too_many_arguments)]
fn train_sub_model(
    name: PresetName,
    manifest: &CorpusManifest,
    rasters: &[Raster],
    data: &SplitData,
    classes: usize,
    class_weights: Vec<f64>,
    options: &HierarchyTrainOptions,
) -> Result<crate::nn::TrainedModel, HierarchyError> {
    let px = manifest.image_px;
    let mut spec = preset(name, px, classes)?;
    if let Some(lr) = options.learning_rate {
        spec.learning_rate = lr;
    }
    let epochs = match name {
        PresetName::Level0 => options.level0_epochs.unwrap_or(spec.epochs),
        _ => options.degree_epochs.unwrap_or(spec.epochs),
    };
    let layers = build_model(&spec.layers, (px, px, 1), options.seed ^ sub_seed(name))?;
    let config = TrainConfig {
        epochs,
        batch_size: options.batch_size.unwrap_or(spec.batch_size),
        optimizer: spec.optimizer,
        learning_rate: spec.learning_rate,
        seed: options.seed ^ sub_seed(name),
        precision: options.precision,
        input_shape: (px, px, 1),
        class_weights,
        shuffle: true,
        verbose: options.verbose,
    };
    let n = data.train_idx.len() as u64;
    let aug = options.augment.clone();
    let fetch = move |epoch: usize, i: usize| -> Vec<f64> {
        let raster = &rasters[data.train_idx[i]];
        match &aug {
            None => raster_to_input(raster),
            Some(params) => {
                let draw_index = epoch as u64 * n + i as u64;
                raster_to_input(&augment(raster, params, draw_index))
            }
        }
    };
    train(
        layers,
        &config,
        &fetch,
        &data.train_labels,
        &data.val_samples,
        &data.val_labels,
    )
    .map_err(|source| HierarchyError::Training {
        model: name.as_str().to_string(),
        source,
    })
}

fn sub_seed(name: PresetName) -> u64 {
    match name {
        PresetName::Level0 => 0x1000,
        PresetName::Degree1 => 0x2000,
        PresetName::Degree2 => 0x3000,
        PresetName::Degree3 => 0x4000,
    }
}

fn degree_preset(degree: u8) -> PresetName {
    match degree {
        1 => PresetName::Degree1,
        2 => PresetName::Degree2,
        _ => PresetName::Degree3,
    }
}

/// Trains one sub-model of the tree: the level-0 degree classifier over
/// all samples, or one degree's component classifier over its samples.
pub fn train_one(
    manifest: &CorpusManifest,
    rasters: &[Raster],
    target: ModelTarget,
    options: &HierarchyTrainOptions,
) -> Result<crate::nn::TrainedModel, HierarchyError> {
    if !manifest.samples.iter().any(|s| s.split == Split::Val) {
        return Err(HierarchyError::MissingSplit(Split::Val));
    }
    let degrees: Vec<u8> = manifest.class_counts.keys().copied().collect();
    match target {
        ModelTarget::Level0 => {
            let degree_index: BTreeMap<u8, usize> =
                degrees.iter().enumerate().map(|(i, &d)| (d, i)).collect();
            let data = collect_split(manifest, rasters, |_| true, |s| degree_index[&s.degree]);
            let weights =
                compute_class_weights(manifest, WeightTarget::Level0, options.level0_weights)
                    .map_err(|e| HierarchyError::Training {
                        model: "level0".into(),
                        source: NnError::Config(e.to_string()),
                    })?;
            let degree_keys: Vec<u32> = degrees.iter().map(|&d| d as u32).collect();
            let classes = degrees.len().max(2);
            let class_weights: Vec<f64> = weights_to_vec(&weights, &degree_keys)
                .into_iter()
                .chain(std::iter::repeat(1.0))
                .take(classes)
                .collect();
            train_sub_model(
                options.preset_override.unwrap_or(PresetName::Level0),
                manifest,
                rasters,
                &data,
                classes,
                class_weights,
                options,
            )
        }
        ModelTarget::Degree(degree) => {
            let classes = manifest
                .class_counts
                .get(&degree)
                .copied()
                .ok_or(HierarchyError::MissingDegree(degree))?
                .max(2);
            let data = collect_split(
                manifest,
                rasters,
                |s| s.degree == degree,
                |s| s.class_id as usize,
            );
            if data.train_idx.is_empty() {
                return Err(HierarchyError::MissingDegree(degree));
            }
            train_sub_model(
                options.preset_override.unwrap_or(degree_preset(degree)),
                manifest,
                rasters,
                &data,
                classes,
                vec![1.0; classes],
                options,
            )
        }
    }
}

/// Trains the level-0 degree model and one level-1 model per degree
/// present in the corpus, then assembles the tree.
pub fn train_hierarchy(
    manifest: &CorpusManifest,
    rasters: &[Raster],
    options: &HierarchyTrainOptions,
) -> Result<HierarchyTrainOutcome, HierarchyError> {
    let degrees: Vec<u8> = manifest.class_counts.keys().copied().collect();
    for d in 1..=degrees.iter().copied().max().unwrap_or(0) {
        if !degrees.contains(&d) {
            return Err(HierarchyError::MissingDegree(d));
        }
    }
    // per-target presets always apply when training the whole tree
    let options = HierarchyTrainOptions {
        preset_override: None,
        ..options.clone()
    };
    let mut histories = BTreeMap::new();
    let mut best_val_accuracy = BTreeMap::new();

    let trained = train_one(manifest, rasters, ModelTarget::Level0, &options)?;
    histories.insert("level0".to_string(), trained.history.clone());
    best_val_accuracy.insert("level0".to_string(), trained.best_val_accuracy);
    let level0 = trained.layers;

    // level-1: one model per degree, uniform weights ("Null")
    let mut level1 = BTreeMap::new();
    for &degree in &degrees {
        let trained = train_one(manifest, rasters, ModelTarget::Degree(degree), &options)?;
        let key = format!("degree{degree}");
        histories.insert(key.clone(), trained.history.clone());
        best_val_accuracy.insert(key, trained.best_val_accuracy);
        level1.insert(degree, trained.layers);
    }

    Ok(HierarchyTrainOutcome {
        model: HierarchicalModel {
            level0,
            degrees,
            level1,
            input_px: manifest.image_px,
        },
        histories,
        best_val_accuracy,
    })
}

// ---------------------------------------------------------------------------
// Persistence: one model file per sub-model plus a JSON index

/// Sidecar metadata saved next to the model files: degrees present, input
/// size, and each degree's class keys (index = class id) so predictions
/// can be reported as glyph sequences.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct HierarchyIndex {
    pub input_px: usize,
    pub degrees: Vec<u8>,
    pub class_keys: BTreeMap<u8, Vec<Vec<u32>>>,
}

/// Extracts the class-id -> class-key table per degree from a manifest.
pub fn class_key_table(manifest: &CorpusManifest) -> BTreeMap<u8, Vec<Vec<u32>>> {
    let mut table: BTreeMap<u8, Vec<Vec<u32>>> = BTreeMap::new();
    for (&degree, &count) in &manifest.class_counts {
        table.insert(degree, vec![Vec::new(); count]);
    }
    for s in &manifest.samples {
        if let Some(keys) = table.get_mut(&s.degree) {
            if let Some(slot) = keys.get_mut(s.class_id as usize) {
                *slot = s.class_key.clone();
            }
        }
    }
    table
}

pub fn save_hierarchy(
    dir: &Path,
    model: &HierarchicalModel,
    class_keys: &BTreeMap<u8, Vec<Vec<u32>>>,
) -> Result<(), NnError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let shape = (model.input_px, model.input_px, 1);
    crate::nn::io::save_model(
        &dir.join("model_level0.ucnn"),
        &model.level0,
        shape,
        Precision::F64,
    )?;
    for (degree, layers) in &model.level1 {
        crate::nn::io::save_model(
            &dir.join(format!("model_degree{degree}.ucnn")),
            layers,
            shape,
            Precision::F64,
        )?;
    }
    let index = HierarchyIndex {
        input_px: model.input_px,
        degrees: model.degrees.clone(),
        class_keys: class_keys.clone(),
    };
    let path = dir.join("hierarchy.json");
    let json = serde_json::to_string_pretty(&index).expect("index serialization");
    std::fs::write(&path, json).map_err(|e| io_err(&path, e))
}

pub fn load_hierarchy(dir: &Path) -> Result<(HierarchicalModel, HierarchyIndex), NnError> {
    let path = dir.join("hierarchy.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let index: HierarchyIndex = serde_json::from_str(&text).map_err(|e| NnError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let level0 = crate::nn::io::load_model(&dir.join("model_level0.ucnn"))?.layers;
    let mut level1 = BTreeMap::new();
    for &degree in &index.degrees {
        let loaded = crate::nn::io::load_model(&dir.join(format!("model_degree{degree}.ucnn")))?;
        level1.insert(degree, loaded.layers);
    }
    Ok((
        HierarchicalModel {
            level0,
            degrees: index.degrees.clone(),
            level1,
            input_px: index.input_px,
        },
        index,
    ))
}

/// Nearest-neighbor resample to a square target size.
fn resample_nearest(raster: &Raster, px: usize) -> Raster {
    let mut out = Raster::new(px, px);
    for y in 0..px {
        for x in 0..px {
            let sx = x * raster.width() / px;
            let sy = y * raster.height() / px;
            out.set(x, y, raster.get(sx, sy));
        }
    }
    out
}

fn argmax(values: &[f64]) -> usize {
    // ties break to the lowest index
    values
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |(ai, av), (i, &v)| {
            if v > av {
                (i, v)
            } else {
                (ai, av)
            }
        })
        .0
}

fn run_single(layers: &[LayerKind], input: Vec<f64>, px: usize) -> Vec<f64> {
    let tensor = crate::nn::Tensor::from_data(&[1, px, px, 1], input);
    let (probs, _) = forward(layers, &tensor, ForwardMode::Infer, Precision::F64);
    probs.data().to_vec()
}

/// Routes one raster through the tree: level-0 argmax chooses the degree,
/// the routed level-1 model chooses the class within that degree.
pub fn predict(model: &HierarchicalModel, raster: &Raster) -> Prediction {
    let px = model.input_px;
    let resampled;
    let raster = if raster.width() != px || raster.height() != px {
        eprintln!(
            "warning: resampling {}x{} input to model size {px}x{px}",
            raster.width(),
            raster.height()
        );
        resampled = resample_nearest(raster, px);
        &resampled
    } else {
        raster
    };
    let input = raster_to_input(raster);
    let level0_probs = run_single(&model.level0, input.clone(), px);
    let degree_pos = argmax(&level0_probs).min(model.degrees.len() - 1);
    let degree = model.degrees[degree_pos];
    let level1_probs = run_single(&model.level1[&degree], input, px);
    let class_id = argmax(&level1_probs) as u32;
    Prediction {
        degree,
        class_id,
        level0_probs,
        level1_probs,
    }
}

/// Accuracy plus macro precision/recall/F1 from a confusion matrix
/// (rows = truth, columns = prediction). Never-predicted classes
/// contribute precision 0.
pub fn metrics_from_confusion(confusion: &[Vec<usize>]) -> MetricsReport {
    let classes = confusion.len();
    let total: usize = confusion.iter().map(|row| row.iter().sum::<usize>()).sum();
    let trace: usize = (0..classes).map(|i| confusion[i][i]).sum();
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        precision_sum += precision;
        recall_sum += recall;
        f1_sum += f1;
    }
    let k = classes.max(1) as f64;
    MetricsReport {
        accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
        macro_precision: precision_sum / k,
        macro_recall: recall_sum / k,
        macro_f1: f1_sum / k,
        confusion: confusion.to_vec(),
        total,
    }
}

/// Evaluates the tree over the selected split (or all samples when None):
/// level-0 over degree labels, each level-1 model conditioned on the true
/// degree, plus the end-to-end joint accuracy.
pub fn evaluate_hierarchy(
    model: &HierarchicalModel,
    manifest: &CorpusManifest,
    rasters: &[Raster],
    split: Option<Split>,
) -> EvaluationReport {
    let degree_index: BTreeMap<u8, usize> = model
        .degrees
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, i))
        .collect();
    let mut level0_confusion = vec![vec![0usize; model.degrees.len()]; model.degrees.len()];
    let mut per_degree_confusion: BTreeMap<u8, Vec<Vec<usize>>> = model
        .degrees
        .iter()
        .map(|&d| {
            let n = manifest.class_counts[&d];
            (d, vec![vec![0usize; n]; n])
        })
        .collect();
    let mut joint_correct = 0usize;
    let mut total = 0usize;

    for (s, raster) in manifest.samples.iter().zip(rasters) {
        if let Some(want) = split {
            if s.split != want {
                continue;
            }
        }
        total += 1;
        let p = predict(model, raster);
        let true_pos = degree_index[&s.degree];
        let pred_pos = degree_index[&p.degree];
        level0_confusion[true_pos][pred_pos] += 1;

        // conditional: the true degree's model, regardless of routing
        let cond_probs = run_single(
            &model.level1[&s.degree],
            raster_to_input(raster),
            model.input_px,
        );
        let cond_pred = argmax(&cond_probs);
        let n = manifest.class_counts[&s.degree];
        if (s.class_id as usize) < n && cond_pred < n {
            per_degree_confusion.get_mut(&s.degree).unwrap()[s.class_id as usize][cond_pred] += 1;
        }

        if p.degree == s.degree && p.class_id == s.class_id {
            joint_correct += 1;
        }
    }

    EvaluationReport {
        level0: metrics_from_confusion(&level0_confusion),
        per_degree: per_degree_confusion
            .iter()
            .map(|(&d, m)| (d, metrics_from_confusion(m)))
            .collect(),
        joint_accuracy: if total == 0 {
            0.0
        } else {
            joint_correct as f64 / total as f64
        },
    }
}

fn io_err(path: &Path, e: std::io::Error) -> NnError {
    NnError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// One row per dataset, mirroring the recognition-rate table layout.
pub fn write_metrics_csv(path: &Path, report: &EvaluationReport) -> Result<(), NnError> {
    let mut out = String::from("dataset,accuracy,precision,recall,f1\n");
    let mut row = |name: &str, m: &MetricsReport| {
        out.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6}\n",
            m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
        ));
    };
    row("level0", &report.level0);
    for (d, m) in &report.per_degree {
        row(&format!("degree{d}"), m);
    }
    out.push_str(&format!("joint,{:.6},,,\n", report.joint_accuracy));
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn write_confusion_csv(path: &Path, name: &str, m: &MetricsReport) -> Result<(), NnError> {
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut write = || -> std::io::Result<()> {
        writeln!(file, "# confusion matrix for {name}: rows = truth, columns = prediction")?;
        for row in &m.confusion {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(file, "{}", cells.join(","))?;
        }
        Ok(())
    };
    write().map_err(|e| io_err(path, e))
}

/// Writes all four training histories as CSVs under `dir`.
pub fn write_histories(
    dir: &Path,
    histories: &BTreeMap<String, Vec<EpochStats>>,
) -> Result<(), NnError> {
    for (name, history) in histories {
        write_history_csv(&dir.join(format!("history_{name}.csv")), history)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerConfig;

    /// A "model" that always emits fixed logits: a zeroed dense layer with
    /// the logits as its bias, then softmax.
    fn hardwired(px: usize, logits: &[f64]) -> Vec<LayerKind> {
        let mut layers = build_model(
            &[
                LayerConfig::Dense {
                    units: logits.len(),
                },
                LayerConfig::Softmax,
            ],
            (px, px, 1),
            0,
        )
        .unwrap();
        if let LayerKind::Dense { weight, bias } = &mut layers[0] {
            for v in weight.data_mut() {
                *v = 0.0;
            }
            bias.data_mut().copy_from_slice(logits);
        }
        layers
    }

    fn tree(px: usize) -> HierarchicalModel {
        HierarchicalModel {
            level0: hardwired(px, &[0.0, 3.0, 0.0]), // always degree 2
            degrees: vec![1, 2, 3],
            level1: BTreeMap::from([
                (1u8, hardwired(px, &[1.0, 0.0])),
                (2u8, hardwired(px, &[0.0, 0.0, 2.0, 0.0])),
                (3u8, hardwired(px, &[0.0, 1.0, 0.0])),
            ]),
            input_px: px,
        }
    }

    #[test]
    fn hardwired_level0_routes_to_degree_two() {
        let model = tree(8);
        let raster = Raster::new(8, 8);
        let p = predict(&model, &raster);
        assert_eq!(p.degree, 2);
        assert_eq!(p.class_id, 2);
        assert_eq!(p.level0_probs.len(), 3);
        assert_eq!(p.level1_probs.len(), 4);
    }

    #[test]
    fn predicted_class_is_within_routed_degree() {
        let model = tree(8);
        for fill in [0u8, 128, 255] {
            let mut raster = Raster::new(8, 8);
            for y in 0..8 {
                for x in 0..8 {
                    raster.set(x, y, fill);
                }
            }
            let p = predict(&model, &raster);
            assert!(model.degrees.contains(&p.degree));
            assert!((p.class_id as usize) < p.level1_probs.len());
        }
    }

    #[test]
    fn size_mismatch_is_resampled() {
        let model = tree(8);
        let raster = Raster::new(16, 16);
        let p = predict(&model, &raster);
        assert_eq!(p.degree, 2);
    }

    /// Independent oracle: per-class tallies computed by brute force over
    /// the label pairs rather than from the confusion matrix.
    fn brute_force_metrics(truth: &[usize], pred: &[usize], classes: usize) -> (f64, f64, f64, f64) {
        let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
        let accuracy = correct as f64 / truth.len() as f64;
        let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
        for c in 0..classes {
            let tp = truth
                .iter()
                .zip(pred)
                .filter(|(&t, &p)| t == c && p == c)
                .count() as f64;
            let fp = truth
                .iter()
                .zip(pred)
                .filter(|(&t, &p)| t != c && p == c)
                .count() as f64;
            let fn_ = truth
                .iter()
                .zip(pred)
                .filter(|(&t, &p)| t == c && p != c)
                .count() as f64;
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ps += precision;
            rs += recall;
            fs += f1;
        }
        let k = classes as f64;
        (accuracy, ps / k, rs / k, fs / k)
    }

    #[test]
    fn crafted_confusion_matrix_matches_oracle() {
        // accuracy must be 12/15 = 0.8
        let confusion = vec![vec![5, 0, 0], vec![0, 4, 1], vec![0, 2, 3]];
        let m = metrics_from_confusion(&confusion);
        assert!((m.accuracy - 0.8).abs() < 1e-12);

        // rebuild the label pairs and compare against the brute-force tally
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (t, row) in confusion.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    truth.push(t);
                    pred.push(p);
                }
            }
        }
        let (acc, prec, rec, f1) = brute_force_metrics(&truth, &pred, 3);
        assert!((m.accuracy - acc).abs() < 1e-12);
        assert!((m.macro_precision - prec).abs() < 1e-12);
        assert!((m.macro_recall - rec).abs() < 1e-12);
        assert!((m.macro_f1 - f1).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor_scores_ones() {
        let confusion = vec![vec![7, 0], vec![0, 9]];
        let m = metrics_from_confusion(&confusion);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_precision, 1.0);
        assert_eq!(m.macro_recall, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn always_class_zero_on_balanced_set() {
        // 3 balanced classes, everything predicted as class 0
        let confusion = vec![vec![4, 0, 0], vec![4, 0, 0], vec![4, 0, 0]];
        let m = metrics_from_confusion(&confusion);
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.macro_recall - 1.0 / 3.0).abs() < 1e-12);
        // class 0 precision = 1/3, classes 1 and 2 never predicted -> 0
        assert!((m.macro_precision - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn f1_bounds_hold() {
        let confusion = vec![vec![5, 2, 1], vec![1, 6, 3], vec![0, 2, 8]];
        let classes = confusion.len();
        for c in 0..classes {
            let tp = confusion[c][c] as f64;
            let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let precision = tp / predicted as f64;
            let recall = tp / actual as f64;
            let f1 = 2.0 * precision * recall / (precision + recall);
            assert!(f1 <= precision.max(recall) + 1e-12);
            assert!((0.0..=1.0).contains(&f1));
        }
    }

    #[test]
    fn metrics_csv_has_expected_rows() {
        let report = EvaluationReport {
            level0: metrics_from_confusion(&[vec![1, 0], vec![0, 1]]),
            per_degree: BTreeMap::from([
                (1u8, metrics_from_confusion(&[vec![1]])),
                (2u8, metrics_from_confusion(&[vec![1]])),
            ]),
            joint_accuracy: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("dataset,accuracy,precision,recall,f1"));
        assert!(text.contains("level0,"));
        assert!(text.contains("degree1,"));
        assert!(text.contains("degree2,"));
        assert!(text.contains("joint,0.5"));
    }
}
