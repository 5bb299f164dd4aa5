//! Fourier-domain modulatory masks: `x̄ = Re(ifft2(M ⊙ fft2(x)))`.

mod file;
mod learn;

pub use file::{MaskFile, MaskMeta, MAGIC, VERSION};
pub use learn::{
    learn_mask_global, learn_mask_single, learn_masks_single, mask_objective, MaskLearnConfig, MaskOutcome, Norm,
    ObjectiveEval, SingleResult, TracePoint, CLAMP_EXPONENT,
};

use crate::error::{Error, Result};
use crate::spectral::{conjugate_index, fft2, ifft2, is_power_of_two, Spectrum};

/// Entries with magnitude below this count as suppressed.
pub const ZERO_THRESHOLD: f64 = 1e-8;

/// Real `d×d` mask in natural (unshifted) frequency order. Entries at
/// conjugate-partner indices are always equal, so filtered images stay real.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    d: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn filled(d: usize, value: f64) -> Result<Self> {
        Self::from_values(d, vec![value; d * d])
    }

    pub fn ones(d: usize) -> Result<Self> {
        Self::filled(d, 1.0)
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::filled(d, 0.0)
    }

    /// Rejects non-finite entries and values that break the conjugate tying.
    pub fn from_values(d: usize, values: Vec<f64>) -> Result<Self> {
        if !is_power_of_two(d) {
            return Err(Error::NotPowerOfTwo(d));
        }
        if values.len() != d * d {
            return Err(Error::shape("mask", format!("{} values for side {d}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("mask entry {i} is not finite")));
        }
        let mask = Mask { d, values };
        if let Some((u, v)) = mask.untied() {
            return Err(Error::InvalidArgument(format!("mask entry ({u},{v}) differs from its conjugate partner")));
        }
        Ok(mask)
    }

    /// Averages every conjugate pair. Use before [`Mask::from_values`] on
    /// values from an untied source.
    pub fn symmetrized(d: usize, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        symmetrize_in_place(&mut out, d);
        out
    }

    fn untied(&self) -> Option<(usize, usize)> {
        let d = self.d;
        (0..d).flat_map(|u| (0..d).map(move |v| (u, v))).find(|&(u, v)| {
            let (cu, cv) = conjugate_index(u, v, d);
            self.values[u * d + v].to_bits() != self.values[cu * d + cv].to_bits()
        })
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.d + v]
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fraction of entries with `|m| < 1e-8`.
    pub fn zero_fraction(&self) -> f64 {
        self.values.iter().filter(|v| v.abs() < ZERO_THRESHOLD).count() as f64 / self.values.len() as f64
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::from_values(self.d, self.values.iter().map(|v| v * s).collect())
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Mask, b: f64) -> Result<Self> {
        self.same_side(other)?;
        Self::from_values(self.d, self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect())
    }

    pub(crate) fn same_side(&self, other: &Mask) -> Result<()> {
        if self.d != other.d {
            return Err(Error::shape("mask", format!("sides {} and {} differ", self.d, other.d)));
        }
        Ok(())
    }
}

pub(crate) fn symmetrize_in_place(values: &mut [f64], d: usize) {
    for u in 0..d {
        for v in 0..d {
            let (cu, cv) = conjugate_index(u, v, d);
            let (i, j) = (u * d + v, cu * d + cv);
            if i < j {
                let avg = 0.5 * (values[i] + values[j]);
                values[i] = avg;
                values[j] = avg;
            }
        }
    }
}

/// Filters one `d×d` image. Also returns the largest imaginary residue of
/// the inverse transform, which is round-off only for a tied mask.
pub fn mask_apply(x: &[f64], mask: &Mask) -> Result<(Vec<f64>, f64)> {
    let d = mask.d;
    if x.len() != d * d {
        return Err(Error::shape("mask_apply", format!("image has {} values, mask side is {d}", x.len())));
    }
    let s = fft2(x, d)?;
    let re = s.re().iter().zip(&mask.values).map(|(a, m)| a * m).collect();
    let im = s.im().iter().zip(&mask.values).map(|(a, m)| a * m).collect();
    ifft2(&Spectrum::from_parts(d, re, im)?)
}

/// Filters a stack of images, each with the same mask.
pub fn filter_images(images: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    let dd = mask.d * mask.d;
    if !images.len().is_multiple_of(dd) {
        return Err(Error::shape("filter_images", format!("{} values is not a whole number of images", images.len())));
    }
    let mut out = Vec::with_capacity(images.len());
    for img in images.chunks_exact(dd) {
        out.extend(mask_apply(img, mask)?.0);
    }
    Ok(out)
}

/// Binary mask selecting the suppressed frequencies: 1 where `|M| < 1e-8`.
pub fn complementary_mask(mask: &Mask) -> Mask {
    let values = mask.values.iter().map(|v| if v.abs() < ZERO_THRESHOLD { 1.0 } else { 0.0 }).collect();
    Mask { d: mask.d, values }
}
