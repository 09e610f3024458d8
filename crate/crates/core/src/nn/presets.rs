//! Shipped model presets: one degree classifier (level 0) and three
//! per-degree component classifiers (level 1).
//!
//! Architectures adapt to the input size: kernels clamp to the current
//! feature-map extent, pooling is skipped once the map is smaller than the
//! window, and filter counts scale linearly with input size (floored at 8)
//! so that small desk-scale inputs train in seconds while full-size inputs
//! keep their reference capacity.

use super::layers::{ActivationKind, LayerConfig};
use super::optim::OptimizerKind;
use super::NnError;

/// Reference input size at which filter counts take their nominal values.
pub const REFERENCE_INPUT_PX: usize = 100;
/// Alternate learning rate for RMSProp quoted in prose; the tables say 1e-3.
pub const ALTERNATE_TEXT_LR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetName {
    Level0,
    Degree1,
    Degree2,
    Degree3,
}

impl PresetName {
    pub const ALL: [PresetName; 4] = [
        PresetName::Level0,
        PresetName::Degree1,
        PresetName::Degree2,
        PresetName::Degree3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::Level0 => "level0",
            PresetName::Degree1 => "degree1",
            PresetName::Degree2 => "degree2",
            PresetName::Degree3 => "degree3",
        }
    }
}

impl std::str::FromStr for PresetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "level0" | "level-0" => Ok(PresetName::Level0),
            "degree1" | "degree-1" => Ok(PresetName::Degree1),
            "degree2" | "degree-2" => Ok(PresetName::Degree2),
            "degree3" | "degree-3" => Ok(PresetName::Degree3),
            other => Err(format!(
                "unknown preset '{other}' (expected level0, degree1, degree2 or degree3)"
            )),
        }
    }
}

/// A model architecture plus its training defaults.
#[derive(Debug, Clone)]
pub struct PresetSpec {
    pub name: PresetName,
    pub layers: Vec<LayerConfig>,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
}

fn scaled_filters(base: usize, input_px: usize) -> usize {
    (base * input_px / REFERENCE_INPUT_PX).max(8)
}

/// Conv with a kernel clamped to the current extent, valid padding.
fn clamped_conv(filters: usize, kernel: usize, extent: &mut usize) -> LayerConfig {
    let k = kernel.min(*extent);
    *extent = *extent - k + 1;
    LayerConfig::Conv2d {
        filters,
        kernel: (k, k),
        stride: (1, 1),
        padding: 0,
    }
}

/// 2x2/2 max pool, or None once the map is too small to pool.
fn maybe_pool(extent: &mut usize) -> Option<LayerConfig> {
    if *extent < 2 {
        return None;
    }
    *extent = (*extent - 2) / 2 + 1;
    Some(LayerConfig::MaxPool {
        pool: (2, 2),
        stride: (2, 2),
    })
}

fn head(classes: usize) -> Vec<LayerConfig> {
    vec![
        LayerConfig::GlobalAveragePool,
        LayerConfig::Dropout { rate: 0.2 },
        LayerConfig::Dense { units: classes },
        LayerConfig::Softmax,
    ]
}

fn level0_layers(input_px: usize, classes: usize) -> Vec<LayerConfig> {
    let filters = scaled_filters(48, input_px);
    let mut extent = input_px;
    let mut layers = Vec::new();
    for _ in 0..2 {
        layers.push(clamped_conv(filters, 3, &mut extent));
        layers.push(LayerConfig::Activation(ActivationKind::Srelu));
        if let Some(pool) = maybe_pool(&mut extent) {
            layers.push(pool);
        }
    }
    layers.extend(head(classes));
    layers
}

fn degree12_layers(input_px: usize, classes: usize) -> Vec<LayerConfig> {
    let filters = scaled_filters(128, input_px);
    let mut extent = input_px;
    let mut layers = Vec::new();
    for (i, kernel) in [8usize, 7, 6, 3].into_iter().enumerate() {
        layers.push(clamped_conv(filters, kernel, &mut extent));
        layers.push(LayerConfig::Activation(ActivationKind::Srelu));
        // pool after conv layers 2 and 4
        if i == 1 || i == 3 {
            if let Some(pool) = maybe_pool(&mut extent) {
                layers.push(pool);
            }
        }
    }
    layers.extend(head(classes));
    layers
}

fn degree3_layers(input_px: usize, classes: usize) -> Vec<LayerConfig> {
    let filters = scaled_filters(128, input_px);
    let mut extent = input_px;
    let mut layers = Vec::new();
    // stem: bring the input up to `filters` channels at the same extent
    let stem_k = if extent >= 3 { 3 } else { 1 };
    layers.push(LayerConfig::Conv2d {
        filters,
        kernel: (stem_k, stem_k),
        stride: (1, 1),
        padding: stem_k / 2,
    });
    layers.push(LayerConfig::Activation(ActivationKind::Srelu));
    for block in 0..4usize {
        // blocks 2 and 4 downsample when the map is still large enough
        let downsample = (block == 1 || block == 3) && extent >= 4;
        let k = if extent >= 3 { 3 } else { 1 };
        let stride = if downsample { 2 } else { 1 };
        let inner = vec![
            LayerConfig::Conv2d {
                filters,
                kernel: (k, k),
                stride: (stride, stride),
                padding: k / 2,
            },
            LayerConfig::Activation(ActivationKind::Srelu),
            LayerConfig::Conv2d {
                filters,
                kernel: (k, k),
                stride: (1, 1),
                padding: k / 2,
            },
        ];
        if downsample {
            extent = (extent + 2 * (k / 2) - k) / 2 + 1;
        }
        layers.push(LayerConfig::Residual {
            inner,
            projection: downsample,
        });
        layers.push(LayerConfig::Activation(ActivationKind::Srelu));
    }
    layers.extend(head(classes));
    layers
}

/// Builds the named preset for a square `input_px` input and `classes`
/// output classes.
pub fn preset(name: PresetName, input_px: usize, classes: usize) -> Result<PresetSpec, NnError> {
    if input_px == 0 {
        return Err(NnError::Config("input size must be >= 1".into()));
    }
    if classes < 2 {
        return Err(NnError::Config("presets need at least 2 classes".into()));
    }
    let (layers, epochs, optimizer) = match name {
        PresetName::Level0 => (level0_layers(input_px, classes), 5, OptimizerKind::Adam),
        PresetName::Degree1 | PresetName::Degree2 => (
            degree12_layers(input_px, classes),
            25,
            OptimizerKind::RmsProp,
        ),
        PresetName::Degree3 => (degree3_layers(input_px, classes), 25, OptimizerKind::RmsProp),
    };
    Ok(PresetSpec {
        name,
        layers,
        epochs,
        optimizer,
        learning_rate: 1e-3,
        batch_size: 32,
    })
}
