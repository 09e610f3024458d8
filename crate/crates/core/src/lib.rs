//! Synthetic cursive-ligature pipeline: a stroke-based glyph alphabet is
//! permuted into joined-component candidates, filtered with two-pass
//! connected-component labeling, and classified by a two-level hierarchical
//! convolutional network (degree first, then identity within the degree).

pub mod alphabet;
pub mod ccl;
pub mod cli;
pub mod dataset;
pub mod hierarchy;
pub mod nn;
pub mod permute;
pub mod raster;

pub use alphabet::{
    base_form_dedup, compose_ligature, default_alphabet, default_styles, load_alphabet,
    render_glyph, write_alphabet, AlphabetError, AlphabetSpec, GlyphSpec, StyleSpec,
};
pub use ccl::{
    component_count, flood_fill_label, is_single_component, strip_small_components,
    two_pass_label, ComponentStats, Connectivity, LabelMap,
};
pub use dataset::{
    augment, compose_filtered, compute_class_weights, generate_corpus, load_corpus, save_corpus,
    split_corpus,
    AugmentParams, CcSettings, ClassWeights, CorpusError, CorpusManifest, SampleEntry, Split,
    WeightMode, WeightTarget,
};
pub use hierarchy::{
    evaluate_hierarchy, metrics_from_confusion, predict, train_hierarchy, EvaluationReport,
    HierarchicalModel, HierarchyError, HierarchyTrainOptions, MetricsReport, Prediction,
};
pub use permute::{count_permutations, k_permutations, PermutationRequest, PermuteError};
pub use raster::{read_pgm, write_pgm, PgmError, Raster};
