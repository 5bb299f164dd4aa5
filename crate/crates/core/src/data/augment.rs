//! Image-domain augmentations: integer translation with zero fill, and
//! bilinear rotation and rescaling about the image centre.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentKind {
    None,
    Adversarial,
    Translate,
    Rotate,
    Scale,
}

impl AugmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Adversarial => "adversarial",
            AugmentKind::Translate => "translate",
            AugmentKind::Rotate => "rotate",
            AugmentKind::Scale => "scale",
        }
    }

    /// One-letter model tag used when comparing mask sets.
    pub fn tag(self) -> char {
        match self {
            AugmentKind::None => 'N',
            AugmentKind::Adversarial => 'A',
            AugmentKind::Translate => 'T',
            AugmentKind::Rotate => 'R',
            AugmentKind::Scale => 'S',
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AugmentKind::None,
            "adversarial" => AugmentKind::Adversarial,
            "translate" => AugmentKind::Translate,
            "rotate" => AugmentKind::Rotate,
            "scale" => AugmentKind::Scale,
            other => return Err(Error::InvalidArgument(format!("unknown augmentation {other:?}"))),
        })
    }
}

/// PGD parameters in `[0, 1]` pixel space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdParams {
    pub eps: f64,
    pub alpha: f64,
    pub steps: usize,
}

impl Default for PgdParams {
    fn default() -> Self {
        PgdParams { eps: 0.1, alpha: 0.02, steps: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    /// Largest integer shift per axis, pixels.
    pub max_shift: usize,
    /// Largest rotation magnitude, degrees.
    pub max_angle: f64,
    pub scale_range: (f64, f64),
    pub pgd: PgdParams,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            kind: AugmentKind::None,
            max_shift: 4,
            max_angle: 30.0,
            scale_range: (0.8, 1.2),
            pgd: PgdParams::default(),
        }
    }
}

impl AugmentPolicy {
    pub fn of(kind: AugmentKind) -> Self {
        AugmentPolicy { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidArgument(format!("scale range [{lo}, {hi}] must satisfy 0 < min <= max")));
        }
        if !(self.pgd.eps >= 0.0 && self.pgd.alpha >= 0.0) {
            return Err(Error::InvalidArgument("PGD eps and alpha must be non-negative".into()));
        }
        if !(self.max_angle >= 0.0) {
            return Err(Error::InvalidArgument("rotation range must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies a random geometric transform drawn from `(seed, epoch, index)`.
    /// `None` and `Adversarial` return the image unchanged; adversarial
    /// perturbations depend on the model and are produced by the trainer.
    pub fn apply(&self, img: &[f64], d: usize, seed: u64, epoch: usize, index: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, index));
        match self.kind {
            AugmentKind::None | AugmentKind::Adversarial => Ok(img.to_vec()),
            AugmentKind::Translate => {
                let a = self.max_shift as i64;
                let dx = rng.gen_range(-a..=a);
                let dy = rng.gen_range(-a..=a);
                Ok(translate(img, d, dx, dy))
            }
            AugmentKind::Rotate => {
                let a = self.max_angle;
                let theta = if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
                Ok(rotate(img, d, theta))
            }
            AugmentKind::Scale => {
                let (lo, hi) = self.scale_range;
                let s = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                rescale(img, d, s)
            }
        }
    }
}

/// SplitMix-style mixing of three words into one seed.
pub fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shifts content by `(dx, dy)` pixels (right/down positive); vacated pixels are zero.
pub fn translate(img: &[f64], d: usize, dx: i64, dy: i64) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    let di = d as i64;
    for y in 0..di {
        let sy = y - dy;
        if !(0..di).contains(&sy) {
            continue;
        }
        for x in 0..di {
            let sx = x - dx;
            if (0..di).contains(&sx) {
                out[(y * di + x) as usize] = img[(sy * di + sx) as usize];
            }
        }
    }
    out
}

fn bilinear(img: &[f64], d: usize, sx: f64, sy: f64) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let at = |x: f64, y: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= d as f64 || y >= d as f64 {
            0.0
        } else {
            img[y as usize * d + x as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Snaps coordinates within 1e-9 of an integer, so right-angle rotations
/// sample pixel centres exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Counter-clockwise rotation (as displayed, rows pointing down) by `degrees`
/// about the image centre, bilinear sampling, zero outside the source.
pub fn rotate(img: &[f64], d: usize, degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let ctr = (d as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; d * d];
    for y in 0..d {
        for x in 0..d {
            let (px, py) = (x as f64 - ctr, y as f64 - ctr);
            let sx = snap(ctr + c * px - s * py);
            let sy = snap(ctr + s * px + c * py);
            out[y * d + x] = bilinear(img, d, sx, sy);
        }
    }
    out
}

/// Magnifies by `s` about the centre; the result keeps the `d×d` frame, so
/// `s > 1` crops and `s < 1` pads with zeros.
pub fn rescale(img: &[f64], d: usize, s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("scale factor must be positive, got {s}")));
    }
    let ctr = (d as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; d * d];
    for y in 0..d {
        for x in 0..d {
            let sx = snap(ctr + (x as f64 - ctr) / s);
            let sy = snap(ctr + (y as f64 - ctr) / s);
            out[y * d + x] = bilinear(img, d, sx, sy);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: usize = 32;

    fn pattern() -> Vec<f64> {
        (0..D * D).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect()
    }

    /// L-shaped pattern without rotational symmetry.
    fn l_shape() -> Vec<f64> {
        let mut img = vec![0.0; D * D];
        for y in 6..26 {
            img[y * D + 8] = 1.0;
        }
        for x in 8..20 {
            img[25 * D + x] = 0.5;
        }
        img
    }

    #[test]
    fn zero_translation_is_identity() {
        let img = pattern();
        assert_eq!(translate(&img, D, 0, 0), img);
    }

    #[test]
    fn full_translation_vacates() {
        assert!(translate(&pattern(), D, 32, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn translate_round_trip_on_interior() {
        let img = pattern();
        let back = translate(&translate(&img, D, 3, 0), D, -3, 0);
        for y in 0..D {
            for x in 0..D {
                let v = back[y * D + x];
                if x < D - 3 {
                    assert_eq!(v, img[y * D + x]);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn identity_rotation_and_scale() {
        let img = pattern();
        let r = rotate(&img, D, 0.0);
        let s = rescale(&img, D, 1.0).unwrap();
        for i in 0..D * D {
            assert!((r[i] - img[i]).abs() < 1e-6);
            assert!((s[i] - img[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn full_turn_returns_image() {
        let img = pattern();
        let r = rotate(&img, D, 360.0);
        for y in 1..D - 1 {
            for x in 1..D - 1 {
                assert!((r[y * D + x] - img[y * D + x]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quarter_turn_is_index_rotation() {
        let img = l_shape();
        let r = rotate(&img, D, 90.0);
        for y in 0..D {
            for x in 0..D {
                let expect = img[x * D + (D - 1 - y)];
                assert!((r[y * D + x] - expect).abs() < 1e-6, "({y},{x})");
            }
        }
    }

    #[test]
    fn nonpositive_scale_is_an_error() {
        assert!(rescale(&pattern(), D, 0.0).is_err());
        assert!(rescale(&pattern(), D, -1.0).is_err());
    }

    #[test]
    fn upscale_magnifies_centre() {
        let mut img = vec![0.0; D * D];
        img[16 * D + 16] = 1.0;
        let s = rescale(&img, D, 2.0).unwrap();
        assert!(s.iter().filter(|&&v| v > 0.0).count() > 1);
    }

    #[test]
    fn sampling_is_pure() {
        let img = pattern();
        for kind in [AugmentKind::Translate, AugmentKind::Rotate, AugmentKind::Scale] {
            let p = AugmentPolicy::of(kind);
            assert_eq!(p.apply(&img, D, 1, 2, 3).unwrap(), p.apply(&img, D, 1, 2, 3).unwrap());
        }
        let none = AugmentPolicy::of(AugmentKind::None);
        assert_eq!(none.apply(&img, D, 1, 2, 3).unwrap(), img);
    }

    #[test]
    fn parse_kinds() {
        for k in ["none", "adversarial", "translate", "rotate", "scale"] {
            assert_eq!(k.parse::<AugmentKind>().unwrap().as_str(), k);
        }
        assert!("blur".parse::<AugmentKind>().is_err());
    }
}
