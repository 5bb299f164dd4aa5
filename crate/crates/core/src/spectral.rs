//! Discrete Fourier transforms, quadrant shifts and frequency-plane partitions.
//!
//! Conventions: the forward transform is unnormalized and the inverse carries
//! the `1/n` (1D) or `1/d²` (2D) factor, so Parseval reads
//! `Σ|x̂|² = d²·Σ|x|²`. Frequency grids are stored in natural (unshifted)
//! order with DC at index `(0, 0)`; [`fftshift`] moves DC to `(d/2, d/2)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

fn check_pow2(n: usize) -> Result<()> {
    if is_power_of_two(n) {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo(n))
    }
}

fn check_grid(op: &'static str, len: usize, d: usize) -> Result<()> {
    if len != d * d {
        return Err(Error::shape(op, format!("expected {d}x{d} grid, got {len} values")));
    }
    Ok(())
}

/// Precomputed twiddles `exp(-2πik/n)` for `k < n/2` and the bit-reversal table.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        check_pow2(n)?;
        let twiddles = (0..n / 2)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(theta.cos(), theta.sin())
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
        Ok(FftPlan { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place unnormalized transform. `inverse` flips the twiddle sign only.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    /// Row-then-column transform of a `n×n` complex grid, unnormalized.
    pub fn process_2d(&self, grid: &mut [Complex64], inverse: bool) {
        let d = self.n;
        debug_assert_eq!(grid.len(), d * d);
        for row in grid.chunks_exact_mut(d) {
            self.process(row, inverse);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); d];
        for c in 0..d {
            for r in 0..d {
                col[r] = grid[r * d + c];
            }
            self.process(&mut col, inverse);
            for r in 0..d {
                grid[r * d + c] = col[r];
            }
        }
    }
}

/// Unnormalized 1D forward DFT of a complex sequence.
pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.process(&mut buf, false);
    Ok(buf)
}

/// Unnormalized 1D forward DFT of a real sequence.
pub fn fft_real(x: &[f64]) -> Result<Vec<Complex64>> {
    let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&buf)
}

/// 1D inverse DFT with the `1/n` factor.
pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.process(&mut buf, true);
    let scale = 1.0 / x.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Complex `d×d` spectrum in natural frequency order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    d: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrum {
    pub fn from_parts(d: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        check_pow2(d)?;
        check_grid("spectrum", re.len(), d)?;
        check_grid("spectrum", im.len(), d)?;
        Ok(Spectrum { d, re, im })
    }

    pub(crate) fn from_complex(d: usize, values: &[Complex64]) -> Self {
        Spectrum { d, re: values.iter().map(|c| c.re).collect(), im: values.iter().map(|c| c.im).collect() }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re.iter().zip(&self.im).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        let i = u * self.d + v;
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect()
    }

    /// Largest deviation from `S(u,v) = conj(S(-u,-v))`.
    pub fn hermitian_residual(&self) -> f64 {
        let d = self.d;
        let mut worst = 0.0f64;
        for u in 0..d {
            for v in 0..d {
                let (cu, cv) = conjugate_index(u, v, d);
                let a = self.get(u, v);
                let b = self.get(cu, cv).conj();
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }
}

/// Index of the conjugate-partner frequency `((-u) mod d, (-v) mod d)`.
pub fn conjugate_index(u: usize, v: usize, d: usize) -> (usize, usize) {
    ((d - u) % d, (d - v) % d)
}

/// Unnormalized forward 2D DFT of a real `d×d` grid.
pub fn fft2(x: &[f64], d: usize) -> Result<Spectrum> {
    let plan = FftPlan::new(d)?;
    check_grid("fft2", x.len(), d)?;
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.process_2d(&mut buf, false);
    Ok(Spectrum::from_complex(d, &buf))
}

/// Inverse 2D DFT with the `1/d²` factor. Returns the real part and the
/// largest absolute imaginary component that was dropped.
pub fn ifft2(s: &Spectrum) -> Result<(Vec<f64>, f64)> {
    let d = s.d;
    let plan = FftPlan::new(d)?;
    let mut buf = s.to_complex();
    plan.process_2d(&mut buf, true);
    let scale = 1.0 / (d * d) as f64;
    let mut residue = 0.0f64;
    let real = buf
        .iter()
        .map(|c| {
            residue = residue.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    Ok((real, residue))
}

/// Quadrant swap moving index `(0,0)` to `(d/2, d/2)`.
pub fn fftshift(grid: &[f64], d: usize) -> Result<Vec<f64>> {
    if !d.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("fftshift needs an even side, got {d}")));
    }
    check_grid("fftshift", grid.len(), d)?;
    let h = d / 2;
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            out[((r + h) % d) * d + (c + h) % d] = grid[r * d + c];
        }
    }
    Ok(out)
}

/// Signed frequency of a natural-order index: `u` for `u < d/2`, else `u - d`.
pub fn signed_frequency(u: usize, d: usize) -> i64 {
    if u < d / 2 {
        u as i64
    } else {
        u as i64 - d as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandKind {
    Radial,
    Angular,
}

impl BandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BandKind::Radial => "radial",
            BandKind::Angular => "angular",
        }
    }
}

impl std::str::FromStr for BandKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(BandKind::Radial),
            "angular" => Ok(BandKind::Angular),
            other => Err(Error::InvalidArgument(format!("unknown band kind {other:?}"))),
        }
    }
}

/// Partition of the `d×d` frequency plane into `K` radial annuli or angular
/// wedges. Membership is indexed in natural frequency order; radii and angles
/// are measured in centered coordinates. Intervals are half-open, radii at or
/// beyond Nyquist (the corners) fall in the outermost annulus, and angles are
/// taken mod π so conjugate pairs always share a wedge.
#[derive(Clone, Debug, PartialEq)]
pub struct BandSpec {
    kind: BandKind,
    k: usize,
    d: usize,
    membership: Vec<usize>,
}

impl BandSpec {
    pub fn new(kind: BandKind, d: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("band count must be positive".into()));
        }
        if d == 0 || !d.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("band partitions need an even side, got {d}")));
        }
        let mut membership = vec![0; d * d];
        for u in 0..d {
            for v in 0..d {
                membership[u * d + v] = match kind {
                    BandKind::Radial => {
                        let fy = signed_frequency(u, d) as f64;
                        let fx = signed_frequency(v, d) as f64;
                        let r = fy.hypot(fx);
                        let width = (d as f64 / 2.0) / k as f64;
                        ((r / width).floor() as usize).min(k - 1)
                    }
                    BandKind::Angular => {
                        // Nyquist rows/columns have no sign-symmetric signed
                        // coordinate, so measure on the smaller member of the pair.
                        let (cu, cv) = conjugate_index(u, v, d);
                        let (ru, rv) = if (u, v) <= (cu, cv) { (u, v) } else { (cu, cv) };
                        let fy = signed_frequency(ru, d) as f64;
                        let fx = signed_frequency(rv, d) as f64;
                        let mut angle = fy.atan2(fx).rem_euclid(PI);
                        if angle >= PI {
                            angle = 0.0;
                        }
                        ((angle / (PI / k as f64)).floor() as usize).min(k - 1)
                    }
                };
            }
        }
        Ok(BandSpec { kind, k, d, membership })
    }

    pub fn radial(d: usize, k: usize) -> Result<Self> {
        Self::new(BandKind::Radial, d, k)
    }

    pub fn angular(d: usize, k: usize) -> Result<Self> {
        Self::new(BandKind::Angular, d, k)
    }

    pub fn kind(&self) -> BandKind {
        self.kind
    }

    pub fn bands(&self) -> usize {
        self.k
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn band_of(&self, u: usize, v: usize) -> usize {
        self.membership[u * self.d + v]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &b in &self.membership {
            counts[b] += 1;
        }
        counts
    }

    /// Nominal `[lo, hi)` interval of band `k`, in pixels of radius or radians.
    pub fn range(&self, band: usize) -> (f64, f64) {
        let k = self.k as f64;
        let b = band as f64;
        match self.kind {
            BandKind::Radial => {
                let r = self.d as f64 / 2.0;
                (b * r / k, (b + 1.0) * r / k)
            }
            BandKind::Angular => (b * PI / k, (b + 1.0) * PI / k),
        }
    }
}

/// Per-band ℓ2 norm of a natural-order `d×d` grid.
pub fn band_energy(grid: &[f64], bands: &BandSpec) -> Result<Vec<f64>> {
    check_grid("band_energy", grid.len(), bands.d)?;
    let mut sums = vec![0.0; bands.k];
    for (v, &b) in grid.iter().zip(&bands.membership) {
        sums[b] += v * v;
    }
    Ok(sums.into_iter().map(f64::sqrt).collect())
}
