//! Synthetic (image, fine mask, coarse mask) datasets.

mod augment;
mod coarsen;
mod dataset;
pub mod pnm;
mod scene;

pub use augment::{apply_transform, augment, AugmentRanges, Transform};
pub use coarsen::{coarsen, connected_regions, erode_regions, labeled_precision, CoarsenSpec};
pub use dataset::{
    derive_seed, generate_dataset, quantize_image, read_dataset, write_dataset, Dataset,
    Normalization, Provenance, SampleTriplet, DATASET_MANIFEST,
};
pub use scene::{default_palette, generate_scene, SceneSpec, ShapeKind};
