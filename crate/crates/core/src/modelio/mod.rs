//! Persistence and ingestion: weight files, descriptor files, dataset
//! manifests and image preprocessing.

mod manifest;
mod weights;

pub mod descriptors;

pub use manifest::{
    load_dataset, load_image, load_manifest, DatasetManifest, GroundTruthSpec, ImageDataset,
    Preprocess,
};
pub use weights::{load_weights, load_weights_file, save_weights, save_weights_file};
