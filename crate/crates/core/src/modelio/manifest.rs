//! Dataset manifests and image ingestion.
//!
//! A manifest is a JSON document listing ordered reference and query
//! image paths, the ground-truth rule, and preprocessing parameters.
//! Paths are resolved relative to the manifest's directory. Decoding
//! produces network-ready tensors: RGB channel order (grayscale inputs
//! are replicated across channels), resized to the network input, values
//! scaled to `[0, 1]` with optional per-channel mean/std.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FloatTensor, TensorShape};
use crate::vpr::GroundTruth;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub references: Vec<String>,
    pub queries: Vec<String>,
    pub ground_truth: GroundTruthSpec,
    #[serde(default)]
    pub preprocess: Preprocess,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GroundTruthSpec {
    /// Query `i` matches references within `i ± tolerance`.
    FrameTolerance { tolerance: usize },
    /// Explicit `(query, reference)` index pairs.
    Pairs { pairs: Vec<(usize, usize)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preprocess {
    pub width: usize,
    pub height: usize,
    /// Scale 8-bit values to `[0, 1]`.
    pub scale_unit: bool,
    pub mean: Option<[f64; 3]>,
    pub std: Option<[f64; 3]>,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self { width: 227, height: 227, scale_unit: true, mean: None, std: None }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(&path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.references.is_empty() || manifest.queries.is_empty() {
        return Err(Error::Manifest(format!(
            "'{}' must list at least one reference and one query",
            manifest.name
        )));
    }
    if manifest.preprocess.width == 0 || manifest.preprocess.height == 0 {
        return Err(Error::Manifest("preprocess dimensions must be >= 1".into()));
    }
    Ok(manifest)
}

/// Preprocessed dataset ready for descriptor extraction.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    pub name: String,
    pub references: Vec<FloatTensor<f32>>,
    pub reference_ids: Vec<String>,
    pub queries: Vec<FloatTensor<f32>>,
    pub query_ids: Vec<String>,
    pub ground_truth: GroundTruth,
}

/// Decode and preprocess every image named by the manifest; paths
/// resolve against `base_dir`.
pub fn load_dataset(manifest: &DatasetManifest, base_dir: &Path) -> Result<ImageDataset> {
    let load_all = |paths: &[String]| -> Result<(Vec<FloatTensor<f32>>, Vec<String>)> {
        let mut tensors = Vec::with_capacity(paths.len());
        let mut ids = Vec::with_capacity(paths.len());
        for p in paths {
            tensors.push(load_image(&base_dir.join(p), &manifest.preprocess)?);
            ids.push(p.clone());
        }
        Ok((tensors, ids))
    };
    let (references, reference_ids) = load_all(&manifest.references)?;
    let (queries, query_ids) = load_all(&manifest.queries)?;

    let ground_truth = match &manifest.ground_truth {
        GroundTruthSpec::FrameTolerance { tolerance } => {
            GroundTruth::from_frame_tolerance(queries.len(), references.len(), *tolerance)
        }
        GroundTruthSpec::Pairs { pairs } => {
            GroundTruth::from_pairs(queries.len(), references.len(), pairs)?
        }
    };

    Ok(ImageDataset {
        name: manifest.name.clone(),
        references,
        reference_ids,
        queries,
        query_ids,
        ground_truth,
    })
}

/// Decode one image to a preprocessed `h x w x 3` tensor.
pub fn load_image(path: &Path, pre: &Preprocess) -> Result<FloatTensor<f32>> {
    let img = image::open(path)?;
    let resized = img.resize_exact(
        pre.width as u32,
        pre.height as u32,
        image::imageops::FilterType::Triangle,
    );
    // grayscale sources replicate into all three channels here
    let rgb = resized.to_rgb8();
    let shape = TensorShape::new(pre.height, pre.width, 3)?;
    let scale = if pre.scale_unit { 1.0 / 255.0 } else { 1.0 };
    Ok(FloatTensor::from_fn(shape, |y, x, c| {
        let raw = rgb.get_pixel(x as u32, y as u32)[c] as f64 * scale;
        let v = match (pre.mean, pre.std) {
            (Some(mean), Some(std)) => (raw - mean[c]) / std[c],
            (Some(mean), None) => raw - mean[c],
            _ => raw,
        };
        v as f32
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Rgb, RgbImage};

    fn write_rgb(path: &Path, w: u32, h: u32, px: Rgb<u8>) {
        let mut img = RgbImage::new(w, h);
        for p in img.pixels_mut() {
            *p = px;
        }
        img.save(path).unwrap();
    }

    fn manifest_json(gt: &str) -> String {
        format!(
            r#"{{
  "name": "toy",
  "references": ["r0.png", "r1.png", "r2.png"],
  "queries": ["q0.png", "q1.png"],
  "ground_truth": {gt},
  "preprocess": {{ "width": 8, "height": 8 }}
}}"#
        )
    }

    #[test]
    fn manifest_roundtrip_and_dataset_sizes() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["r0.png", "r1.png", "r2.png", "q0.png", "q1.png"] {
            write_rgb(&dir.path().join(name), 4, 6, Rgb([200, 100, 50]));
        }
        let mpath = dir.path().join("toy.json");
        std::fs::write(&mpath, manifest_json(r#"{ "mode": "frame_tolerance", "tolerance": 2 }"#))
            .unwrap();

        let manifest = load_manifest(&mpath).unwrap();
        assert_eq!(manifest.preprocess.width, 8);
        let ds = load_dataset(&manifest, dir.path()).unwrap();
        assert_eq!((ds.references.len(), ds.queries.len()), (3, 2));
        assert_eq!(*ds.references[0].shape(), TensorShape::new(8, 8, 3).unwrap());
        // tolerance 2: query 1 accepts references 0..=2 but query 1 ref 6 is out of range anyway
        assert!(ds.ground_truth.is_correct(1, 2));
        assert!(ds.ground_truth.is_correct(0, 2));

        // scaled to [0,1]
        let v = ds.references[0].get(0, 0, 0);
        assert!((v - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn frame_tolerance_matches_neighbor_semantics() {
        // tolerance 2: query 5 matched to reference 6 counts as correct
        let gt = GroundTruth::from_frame_tolerance(10, 10, 2);
        assert!(gt.is_correct(5, 6));
    }

    #[test]
    fn grayscale_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let mut img = GrayImage::new(5, 5);
        for p in img.pixels_mut() {
            p.0 = [120];
        }
        img.save(&path).unwrap();

        let t = load_image(&path, &Preprocess::default()).unwrap();
        assert_eq!(t.shape().channels, 3);
        let want = 120.0 / 255.0;
        for c in 0..3 {
            assert!((t.get(0, 0, c) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_image_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("toy.json");
        std::fs::write(&mpath, manifest_json(r#"{ "mode": "frame_tolerance", "tolerance": 0 }"#))
            .unwrap();
        let manifest = load_manifest(&mpath).unwrap();
        assert!(load_dataset(&manifest, dir.path()).is_err());
    }

    #[test]
    fn pairs_mode_validated() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["r0.png", "r1.png", "r2.png", "q0.png", "q1.png"] {
            write_rgb(&dir.path().join(name), 3, 3, Rgb([10, 20, 30]));
        }
        let mpath = dir.path().join("toy.json");
        std::fs::write(&mpath, manifest_json(r#"{ "mode": "pairs", "pairs": [[0, 2], [1, 0]] }"#))
            .unwrap();
        let ds = load_dataset(&load_manifest(&mpath).unwrap(), dir.path()).unwrap();
        assert!(ds.ground_truth.is_correct(0, 2));
        assert!(!ds.ground_truth.is_correct(0, 0));

        std::fs::write(&mpath, manifest_json(r#"{ "mode": "pairs", "pairs": [[0, 9]] }"#))
            .unwrap();
        assert!(load_dataset(&load_manifest(&mpath).unwrap(), dir.path()).is_err());
    }
}
