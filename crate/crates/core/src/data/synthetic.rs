//! Download-free image generator: class `c` is a grating whose wave vector
//! points at angle `c·π/C`, plus a Gaussian blob at a class-specific position.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetSplit, LabeledImage, IMAGE_SIDE};
use crate::error::{Error, Result};

pub const MAX_CLASSES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticParams {
    /// Grating frequency range, in cycles per image side.
    pub freq: (f64, f64),
    /// Half-width of the uniform phase jitter, radians.
    pub phase_jitter: f64,
    pub grating_amplitude: f64,
    pub blob_amplitude: f64,
    pub blob_sigma: f64,
    /// Distance of the blob centre from the image centre, pixels.
    pub blob_radius: f64,
    pub noise_std: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            freq: (6.75, 7.25),
            phase_jitter: PI / 3.0,
            grating_amplitude: 0.1,
            blob_amplitude: 0.35,
            blob_sigma: 4.0,
            blob_radius: 7.0,
            noise_std: 0.05,
        }
    }
}

pub fn render(class: usize, classes: usize, params: &SyntheticParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = IMAGE_SIDE;
    let theta = class as f64 * PI / classes as f64;
    let f = rng.gen_range(params.freq.0..=params.freq.1);
    let phase = rng.gen_range(-params.phase_jitter..=params.phase_jitter);
    let (kx, ky) = (f * theta.cos(), f * theta.sin());
    let blob_angle = 2.0 * PI * class as f64 / classes as f64;
    let c = (d as f64 - 1.0) / 2.0;
    let (bx, by) = (c + params.blob_radius * blob_angle.cos(), c + params.blob_radius * blob_angle.sin());
    let noise = Normal::new(0.0, params.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut px = vec![0.0; d * d];
    for y in 0..d {
        for x in 0..d {
            let (xf, yf) = (x as f64, y as f64);
            let grating = (2.0 * PI * (kx * xf + ky * yf) / d as f64 + phase).cos();
            let r2 = (xf - bx).powi(2) + (yf - by).powi(2);
            let blob = (-r2 / (2.0 * params.blob_sigma * params.blob_sigma)).exp();
            let mut v = 0.5 + params.grating_amplitude * grating + params.blob_amplitude * blob;
            if params.noise_std > 0.0 {
                v += noise.sample(rng);
            }
            px[y * d + x] = v.clamp(0.0, 1.0);
        }
    }
    px
}

/// `n_per_class` images per class, split 70/30 with the same seed.
pub fn generate_synthetic(classes: usize, n_per_class: usize, seed: u64) -> Result<DatasetSplit> {
    generate_with(classes, n_per_class, seed, &SyntheticParams::default())
}

pub fn generate_with(classes: usize, n_per_class: usize, seed: u64, params: &SyntheticParams) -> Result<DatasetSplit> {
    if classes == 0 || classes > MAX_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "synthetic data supports 1..={MAX_CLASSES} classes, got {classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(classes * n_per_class);
    for i in 0..n_per_class {
        for c in 0..classes {
            images.push(LabeledImage {
                id: (i * classes + c) as u64,
                pixels: render(c, classes, params, &mut rng),
                label: c,
            });
        }
    }
    DatasetSplit::from_images(images, IMAGE_SIDE, classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{band_energy, fft2, BandSpec};

    #[test]
    fn counts_per_class() {
        let s = generate_synthetic(5, 200, 3).unwrap();
        let mut counts = [0usize; 5];
        for im in s.train.iter().chain(&s.val) {
            counts[im.label] += 1;
            assert!(im.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        assert_eq!(counts, [200; 5]);
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = generate_synthetic(3, 20, 42).unwrap();
        let b = generate_synthetic(3, 20, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(3, 20, 43).unwrap());
    }

    #[test]
    fn too_many_classes() {
        assert!(generate_synthetic(9, 1, 0).is_err());
    }

    #[test]
    fn class_mean_peaks_in_its_wedge() {
        let classes = 5;
        let s = generate_synthetic(classes, 100, 5).unwrap();
        let d = IMAGE_SIDE;
        let bands = BandSpec::angular(d, 8).unwrap();
        for c in 0..classes {
            let members: Vec<_> = s.train.iter().chain(&s.val).filter(|im| im.label == c).collect();
            let mut mean = vec![0.0; d * d];
            for im in &members {
                mean.iter_mut().zip(&im.pixels).for_each(|(m, p)| *m += p / members.len() as f64);
            }
            let avg = mean.iter().sum::<f64>() / (d * d) as f64;
            mean.iter_mut().for_each(|m| *m -= avg);
            let e = band_energy(&fft2(&mean, d).unwrap().magnitude(), &bands).unwrap();
            let dominant = (0..8).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
            let angle = c as f64 * PI / classes as f64;
            let expected = (angle / (PI / 8.0)).floor() as usize;
            assert_eq!(dominant, expected, "class {c}: energies {e:?}");
        }
    }
}
