//! Corpus construction: enumerate candidate glyph sequences, compose and
//! filter them with the connected-component test, assign dense per-degree
//! class ids, split, augment, weight, and persist.
//!
//! Persisted layout: one binary PGM per sample under `images/`, named
//! `<degree>_<class_id>_<style_id>.pgm`, plus a `manifest.jsonl` whose
//! header line carries a checksum over all sample lines.

use crate::alphabet::{compose_ligature, base_form_dedup, AlphabetSpec, StyleSpec, MIN_CELL_PX};
use crate::ccl::{is_single_component, strip_small_components, Connectivity};
use crate::raster::{read_pgm, write_pgm, PgmError, Raster};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub path: String,
    pub degree: u8,
    pub class_id: u32,
    pub class_key: Vec<u32>,
    pub style_id: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub alphabet: String,
    pub image_px: usize,
    pub style_count: usize,
    /// degree -> number of surviving classes
    pub class_counts: BTreeMap<u8, usize>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, Copy)]
pub struct CcSettings {
    pub connectivity: Connectivity,
    pub area_fraction: f64,
}

impl Default for CcSettings {
    fn default() -> Self {
        CcSettings {
            connectivity: Connectivity::Eight,
            area_fraction: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub rotation_max: f64,
    pub zoom_range: (f64, f64),
    pub flip_horizontal: bool,
    pub seed: u64,
}

impl AugmentParams {
    pub fn neutral(seed: u64) -> Self {
        AugmentParams {
            rotation_max: 0.0,
            zoom_range: (1.0, 1.0),
            flip_horizontal: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=15.0).contains(&self.rotation_max) {
            return Err(CorpusError::BadParams(format!(
                "rotation_max {} outside [0, 15]",
                self.rotation_max
            )));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.5 && hi < 1.5 && lo <= hi) {
            return Err(CorpusError::BadParams(format!(
                "zoom range ({lo}, {hi}) outside (0.5, 1.5)"
            )));
        }
        Ok(())
    }
}

/// Per-class positive weights; classes missing from the map weigh 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub BTreeMap<u32, f64>);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights(BTreeMap::new())
    }

    pub fn get(&self, class_id: u32) -> f64 {
        self.0.get(&class_id).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Preset,
    Balanced,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightTarget {
    /// The degree-labeled union dataset; classes are degrees 1..3.
    Level0,
    /// One per-degree component dataset; classes are its class_ids.
    Degree(u8),
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Alphabet(#[from] crate::alphabet::AlphabetError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("no glyph sequence of degree {0} survives the join filter")]
    NoSurvivors(u8),
    #[error("degree {degree} class {class_id} has {n} sample(s); stratified split needs at least 2")]
    ClassTooSmall { degree: u8, class_id: u32, n: usize },
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("manifest checksum mismatch: header says {expected}, computed {actual}")]
    ChecksumMismatch { expected: String, actual: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

// ---------------------------------------------------------------------------
// Generation

/// Builds the filtered corpus: deduped base forms feed k-permutations for
/// k = 1..max_degree; each sequence is composed per style, stripped of
/// small components, and kept iff a single component remains. Surviving
/// distinct class keys get dense per-degree class ids in lexicographic key
/// order. All samples start in the train split.
pub fn generate_corpus(
    alphabet: &AlphabetSpec,
    styles: &[StyleSpec],
    max_degree: u8,
    image_px: usize,
    cc: CcSettings,
) -> Result<(CorpusManifest, Vec<Raster>), CorpusError> {
    if !(1..=3).contains(&max_degree) {
        return Err(CorpusError::BadParams(format!(
            "max_degree {max_degree} outside 1..=3"
        )));
    }
    if styles.is_empty() {
        return Err(CorpusError::BadParams("at least one style required".into()));
    }
    if image_px < MIN_CELL_PX {
        return Err(CorpusError::BadParams(format!(
            "image size {image_px} below the minimum of {MIN_CELL_PX}"
        )));
    }
    alphabet.validate()?;
    let reps = base_form_dedup(alphabet);

    let mut samples = Vec::new();
    let mut rasters = Vec::new();
    let mut class_counts = BTreeMap::new();
    for degree in 1..=max_degree {
        let k = degree as usize;
        let mut class_id: u32 = 0;
        for seq_idx in crate::permute::KPermutationIndices::new(reps.len(), k) {
            let seq: Vec<&crate::alphabet::GlyphSpec> = seq_idx.iter().map(|&i| &reps[i]).collect();
            let class_key: Vec<u32> = seq.iter().map(|g| g.base_form_id).collect();
            let mut kept: Vec<(u32, Raster)> = Vec::new();
            for style in styles {
                if let Some(r) = compose_filtered(&seq, style, image_px, cc)? {
                    kept.push((style.style_id, r));
                }
            }
            // a class exists only when it survives under every style
            if kept.len() == styles.len() {
                for (style_id, raster) in kept {
                    samples.push(SampleEntry {
                        path: format!("images/{}_{}_{}.pgm", degree, class_id, style_id),
                        degree,
                        class_id,
                        class_key: class_key.clone(),
                        style_id,
                        split: Split::Train,
                    });
                    rasters.push(raster);
                }
                class_id += 1;
            }
        }
        if class_id == 0 {
            return Err(CorpusError::NoSurvivors(degree));
        }
        class_counts.insert(degree, class_id as usize);
    }
    Ok((
        CorpusManifest {
            alphabet: alphabet.name.clone(),
            image_px,
            style_count: styles.len(),
            class_counts,
            samples,
        },
        rasters,
    ))
}

/// Composes one sequence at a cell size of at least MIN_CELL_PX per glyph,
/// strips small components, applies the single-component filter, and
/// shrinks to the target size. Returns None when the sequence is rejected.
pub fn compose_filtered(
    seq: &[&crate::alphabet::GlyphSpec],
    style: &StyleSpec,
    image_px: usize,
    cc: CcSettings,
) -> Result<Option<Raster>, CorpusError> {
    let canvas = image_px.max(MIN_CELL_PX * seq.len());
    let composed = compose_ligature(seq, style, canvas)?;
    let stripped = strip_small_components(&composed, cc.connectivity, cc.area_fraction);
    if !is_single_component(&stripped, cc.connectivity) {
        return Ok(None);
    }
    let scaled = if canvas > image_px {
        stripped.shrink_to(image_px, image_px)
    } else {
        stripped
    };
    // the stored raster must itself pass the filter
    if !is_single_component(&scaled, cc.connectivity) {
        return Ok(None);
    }
    Ok(Some(scaled))
}

// ---------------------------------------------------------------------------
// Split

/// Stratified train/validation split per (degree, class); deterministic
/// given the seed. Each class contributes round(n * val_fraction) clamped
/// to [1, n-1] validation samples.
pub fn split_corpus(
    manifest: &mut CorpusManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(), CorpusError> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(CorpusError::BadParams(format!(
            "val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    let mut groups: BTreeMap<(u8, u32), Vec<usize>> = BTreeMap::new();
    for (i, s) in manifest.samples.iter().enumerate() {
        groups.entry((s.degree, s.class_id)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ((degree, class_id), mut idxs) in groups {
        let n = idxs.len();
        if n < 2 {
            return Err(CorpusError::ClassTooSmall {
                degree,
                class_id,
                n,
            });
        }
        idxs.shuffle(&mut rng);
        let val_n = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        for (pos, &i) in idxs.iter().enumerate() {
            manifest.samples[i].split = if pos < val_n { Split::Val } else { Split::Train };
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Augmentation

/// Applies flip, rotation, and zoom in that order, with nearest-neighbor
/// resampling about the image center. Randomness derives from
/// (params.seed, draw_index) so every draw is independently reproducible.
/// Labels are unaffected by construction (callers copy them through).
pub fn augment(raster: &Raster, params: &AugmentParams, draw_index: u64) -> Raster {
    let neutral = !params.flip_horizontal
        && params.rotation_max == 0.0
        && params.zoom_range == (1.0, 1.0);
    if neutral {
        return raster.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(draw_index);

    let flip = params.flip_horizontal && rng.gen_bool(0.5);
    let angle_deg = if params.rotation_max > 0.0 {
        rng.gen_range(-params.rotation_max..=params.rotation_max)
    } else {
        0.0
    };
    let (zlo, zhi) = params.zoom_range;
    let zoom = if zlo < zhi { rng.gen_range(zlo..=zhi) } else { zlo };

    let w = raster.width();
    let h = raster.height();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let angle = angle_deg.to_radians();
    let (sin, cos) = angle.sin_cos();
    let mut out = Raster::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // inverse mapping: undo zoom, then rotation, then flip
            let mut sx = (x as f64 - cx) / zoom;
            let mut sy = (y as f64 - cy) / zoom;
            let (rx, ry) = (sx * cos + sy * sin, -sx * sin + sy * cos);
            sx = rx + cx;
            sy = ry + cy;
            if flip {
                sx = w as f64 - 1.0 - sx;
            }
            let nx = (sx + 0.5).floor();
            let ny = (sy + 0.5).floor();
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                out.set(x, y, raster.get(nx as usize, ny as usize));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Class weights

/// The preset level-0 weight map: degree 1 is rarest and weighted highest.
pub fn preset_level0_weights() -> ClassWeights {
    ClassWeights(BTreeMap::from([(1, 350.0), (2, 30.0), (3, 10.0)]))
}

pub fn compute_class_weights(
    manifest: &CorpusManifest,
    target: WeightTarget,
    mode: WeightMode,
) -> Result<ClassWeights, CorpusError> {
    if manifest.samples.is_empty() {
        return Err(CorpusError::BadParams("empty manifest".into()));
    }
    let counts: BTreeMap<u32, usize> = match target {
        WeightTarget::Level0 => {
            let mut m = BTreeMap::new();
            for s in &manifest.samples {
                *m.entry(s.degree as u32).or_insert(0) += 1;
            }
            m
        }
        WeightTarget::Degree(d) => {
            let mut m = BTreeMap::new();
            for s in manifest.samples.iter().filter(|s| s.degree == d) {
                *m.entry(s.class_id).or_insert(0) += 1;
            }
            m
        }
    };
    match mode {
        WeightMode::Uniform => Ok(ClassWeights::uniform()),
        WeightMode::Preset => {
            // the full preset table, plus 1.0 for any class it doesn't cover
            let mut map = preset_level0_weights().0;
            for &class in counts.keys() {
                if !map.contains_key(&class) {
                    eprintln!("warning: class {class} missing from preset weights, using 1");
                    map.insert(class, 1.0);
                }
            }
            Ok(ClassWeights(map))
        }
        WeightMode::Balanced => {
            let total: usize = counts.values().sum();
            let num_classes = counts.len();
            let map = counts
                .iter()
                .map(|(&c, &n)| (c, total as f64 / (num_classes as f64 * n as f64)))
                .collect();
            Ok(ClassWeights(map))
        }
    }
}

// ---------------------------------------------------------------------------
// Persistence

fn manifest_header_json(manifest: &CorpusManifest, checksum: &str) -> String {
    serde_json::json!({
        "alphabet": manifest.alphabet,
        "image_px": manifest.image_px,
        "style_count": manifest.style_count,
        "class_counts": manifest.class_counts.iter()
            .map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<String, usize>>(),
        "checksum": checksum,
    })
    .to_string()
}

fn sample_lines(manifest: &CorpusManifest) -> Vec<String> {
    manifest
        .samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("sample serialization"))
        .collect()
}

fn checksum_of(lines: &[String]) -> String {
    let mut hasher = Sha256::new();
    for line in lines {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    format!("{:x}", hasher.finalize())
}

pub fn save_corpus(
    manifest: &CorpusManifest,
    rasters: &[Raster],
    dir: &Path,
) -> Result<(), CorpusError> {
    assert_eq!(manifest.samples.len(), rasters.len(), "sample/raster mismatch");
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;
    for (s, r) in manifest.samples.iter().zip(rasters) {
        write_pgm(r, &dir.join(&s.path))?;
    }
    let lines = sample_lines(manifest);
    let mut doc = manifest_header_json(manifest, &checksum_of(&lines));
    doc.push('\n');
    for line in &lines {
        doc.push_str(line);
        doc.push('\n');
    }
    let manifest_path = dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, doc).map_err(io_err(&manifest_path))?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<(CorpusManifest, Vec<Raster>), CorpusError> {
    let manifest_path = dir.join("manifest.jsonl");
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut lines = text.lines();
    let header_line = lines.next().ok_or(CorpusError::Manifest {
        line: 1,
        msg: "empty manifest".into(),
    })?;
    let header: serde_json::Value =
        serde_json::from_str(header_line).map_err(|e| CorpusError::Manifest {
            line: 1,
            msg: e.to_string(),
        })?;
    let mut samples = Vec::new();
    let mut sample_lines = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: SampleEntry = serde_json::from_str(line).map_err(|e| CorpusError::Manifest {
            line: i + 2,
            msg: e.to_string(),
        })?;
        samples.push(s);
        sample_lines.push(line.to_string());
    }
    let expected = header["checksum"].as_str().unwrap_or("").to_string();
    let actual = checksum_of(&sample_lines);
    if expected != actual {
        return Err(CorpusError::ChecksumMismatch { expected, actual });
    }
    let class_counts = header["class_counts"]
        .as_object()
        .map(|m| {
            m.iter()
                .filter_map(|(k, v)| Some((k.parse().ok()?, v.as_u64()? as usize)))
                .collect()
        })
        .unwrap_or_default();
    let manifest = CorpusManifest {
        alphabet: header["alphabet"].as_str().unwrap_or("").to_string(),
        image_px: header["image_px"].as_u64().unwrap_or(0) as usize,
        style_count: header["style_count"].as_u64().unwrap_or(0) as usize,
        class_counts,
        samples,
    };
    let mut rasters = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        rasters.push(read_pgm(&dir.join(&s.path))?);
    }
    Ok((manifest, rasters))
}
