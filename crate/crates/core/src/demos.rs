//! Small numerical demonstrations of how nonlinearities and translations
//! reshape spectra: harmonic distortion, intermodulation, the
//! self-convolution identity, and sinc damping of translation averages.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{fft, fft_real, is_power_of_two};

pub const DEFAULT_LEN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Identity,
    Softplus,
    Tanh,
    Relu,
    Hardtanh,
}

impl Nonlinearity {
    pub const ALL: [Nonlinearity; 5] = [
        Nonlinearity::Identity,
        Nonlinearity::Softplus,
        Nonlinearity::Tanh,
        Nonlinearity::Relu,
        Nonlinearity::Hardtanh,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Hardtanh => x.clamp(-1.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Softplus => "softplus",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Relu => "relu",
            Nonlinearity::Hardtanh => "hardtanh",
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Nonlinearity::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown nonlinearity {s:?}")))
    }
}

fn check_len(n: usize) -> Result<()> {
    if !is_power_of_two(n) || n < 4 {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(())
}

/// `|FFT(σ(amplitude · sin(2π·freq·t)))|` over bins `0..=n/2`, with
/// `t = i/n`.
pub fn nonlinearity_spectrum(freq: usize, sigma: Nonlinearity, n: usize, amplitude: f64) -> Result<Vec<f64>> {
    check_len(n)?;
    if freq == 0 || freq >= n / 2 {
        return Err(Error::InvalidArgument(format!("frequency must lie in (0, {}), got {freq}", n / 2)));
    }
    let x: Vec<f64> =
        (0..n).map(|i| sigma.apply(amplitude * (2.0 * PI * (freq * i) as f64 / n as f64).sin())).collect();
    Ok(fft_real(&x)?[..=n / 2].iter().map(|z| z.norm()).collect())
}

/// Magnitudes at the bins the squared two-tone signal can occupy.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermodulationReport {
    /// `(bin, magnitude)` for `0, 2w₁, 2w₂, w₁+w₂, |w₁−w₂|`, with `w₁ ≥ w₂`.
    pub peaks: Vec<(usize, f64)>,
    /// Largest magnitude at any other one-sided bin.
    pub off_support_max: f64,
    pub spectrum: Vec<f64>,
}

/// Spectrum of `(cos(w₁t) + cos(w₂t))²`, which expands to
/// `½[2 + cos 2w₁t + cos 2w₂t + 2cos (w₁+w₂)t + 2cos (w₁−w₂)t]`.
pub fn intermodulation_check(w1: usize, w2: usize, n: usize) -> Result<IntermodulationReport> {
    check_len(n)?;
    if w1 == w2 || w1 == 0 || w2 == 0 {
        return Err(Error::InvalidArgument("tones must be distinct and non-zero".into()));
    }
    if w1 + w2 >= n / 2 {
        return Err(Error::InvalidArgument(format!("w1 + w2 = {} aliases at length {n} (needs < {})", w1 + w2, n / 2)));
    }
    let (hi, lo) = (w1.max(w2), w1.min(w2));
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let f = (hi as f64 * t).cos() + (lo as f64 * t).cos();
            f * f
        })
        .collect();
    let spectrum: Vec<f64> = fft_real(&x)?[..=n / 2].iter().map(|z| z.norm()).collect();
    let bins = [0, 2 * hi, 2 * lo, hi + lo, hi - lo];
    let peaks = bins.iter().map(|&b| (b, spectrum[b])).collect();
    let off_support_max =
        spectrum.iter().enumerate().filter(|(b, _)| !bins.contains(b)).map(|(_, m)| *m).fold(0.0, f64::max);
    Ok(IntermodulationReport { peaks, off_support_max, spectrum })
}

/// Expected one-sided magnitudes for [`intermodulation_check`]: a constant
/// `a` maps to `n·a` and a cosine of amplitude `a` to `n·a/2`.
pub fn intermodulation_expected(n: usize) -> [f64; 5] {
    let n = n as f64;
    [n, n / 4.0, n / 4.0, n / 2.0, n / 2.0]
}

fn circular_convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let n = a.len();
    (0..n).map(|k| (0..n).map(|j| a[j] * b[(k + n - j) % n]).sum()).collect()
}

/// Max `|FFT(x^k) − n^{1−k} (x̂ ∗ ⋯ ∗ x̂)|` with circular convolution.
pub fn self_convolution_check(x: &[f64], k: u32) -> Result<f64> {
    check_len(x.len())?;
    if !(2..=3).contains(&k) {
        return Err(Error::InvalidArgument(format!("order must be 2 or 3, got {k}")));
    }
    let n = x.len();
    let xhat = fft_real(x)?;
    let mut conv = xhat.clone();
    for _ in 1..k {
        conv = circular_convolve(&conv, &xhat);
    }
    let scale = (n as f64).powi(1 - k as i32);
    let lhs = fft(&x.iter().map(|v| Complex64::new(v.powi(k as i32), 0.0)).collect::<Vec<_>>())?;
    Ok(lhs.iter().zip(&conv).map(|(a, b)| (a - b * scale).norm()).fold(0.0, f64::max))
}

/// `2a·sinc(2πγa)`: the transform of the box `[−a, a]`, i.e. the factor by
/// which averaging over translations `t ∈ [−a, a]` (unnormalized) scales
/// frequency `γ`.
pub fn sinc_factor(gamma: f64, a: f64) -> f64 {
    let z = 2.0 * PI * gamma * a;
    if z == 0.0 {
        2.0 * a
    } else {
        2.0 * a * z.sin() / z
    }
}

/// Multiplies bin `γ` of a one-sided spectrum by [`sinc_factor`].
pub fn translation_damping(spectrum: &[f64], a: f64) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument("translation range must be positive".into()));
    }
    Ok(spectrum.iter().enumerate().map(|(g, s)| s * sinc_factor(g as f64, a)).collect())
}

/// Composite Simpson approximation of `∫_{−a}^{a} e^{−2πiγt} dt` on
/// `intervals` (rounded up to even) sub-intervals.
pub fn box_transform_simpson(gamma: f64, a: f64, intervals: usize) -> Complex64 {
    let m = intervals.max(2).next_multiple_of(2);
    let h = 2.0 * a / m as f64;
    let f = |t: f64| Complex64::from_polar(1.0, -2.0 * PI * gamma * t);
    let mut acc = f(-a) + f(a);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(-a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}
