//! Labeled grayscale images: IDX ingestion, a synthetic generator, and the
//! augmentations used during training.

pub mod augment;
pub mod idx;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Side length every dataset is padded to.
pub const IMAGE_SIDE: usize = 32;

/// Fraction of images assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// Stable identifier (source index) used to pair masks across runs.
    pub id: u64,
    /// Row-major `side×side` pixels in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub side: usize,
    pub classes: usize,
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    /// Pixel statistics of the training split only.
    pub mean: f64,
    pub std: f64,
}

impl DatasetSplit {
    /// Seeded shuffle followed by a 70/30 train/val cut; statistics come from
    /// the training part.
    pub fn from_images(mut images: Vec<LabeledImage>, side: usize, classes: usize, seed: u64) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least two images to split, got {}", images.len())));
        }
        if let Some(bad) = images.iter().find(|im| im.pixels.len() != side * side || im.label >= classes) {
            return Err(Error::InvalidArgument(format!(
                "image {} has {} pixels and label {} (side {side}, {classes} classes)",
                bad.id,
                bad.pixels.len(),
                bad.label
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        images.shuffle(&mut rng);
        let n_train = ((images.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, images.len() - 1);
        let val = images.split_off(n_train);
        let train = images;
        let (mean, std) = pixel_stats(&train);
        if !(std > 0.0) {
            return Err(Error::InvalidArgument("training pixels have zero variance".into()));
        }
        Ok(DatasetSplit { side, classes, train, val, mean, std })
    }

    /// Digest of the ordered image ids of both splits.
    pub fn id_hash(&self) -> String {
        let mut h = Sha256::new();
        for im in self.train.iter().chain(&self.val) {
            h.update(im.id.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn normalize(&self, pixels: &[f64]) -> Vec<f64> {
        normalize(pixels, self.mean, self.std)
    }
}

pub fn normalize(pixels: &[f64], mean: f64, std: f64) -> Vec<f64> {
    pixels.iter().map(|p| (p - mean) / std).collect()
}

fn pixel_stats(images: &[LabeledImage]) -> (f64, f64) {
    let n = images.iter().map(|im| im.pixels.len()).sum::<usize>() as f64;
    let mean = images.iter().flat_map(|im| &im.pixels).sum::<f64>() / n;
    let var = images.iter().flat_map(|im| &im.pixels).map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
