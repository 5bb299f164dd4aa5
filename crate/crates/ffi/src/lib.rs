//! C ABI for fmask. Objects are opaque heap handles released with the
//! matching `*_free`. Every fallible call returns an `FmaskStatus`; on
//! failure a message for the calling thread is available from
//! `fmask_last_error`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fmask::data::LabeledImage;
use fmask::mask::{
    complementary_mask, filter_images, learn_mask_global, learn_mask_single, Mask, MaskFile, MaskLearnConfig, Norm,
    SingleResult,
};
use fmask::model::Checkpoint;
use fmask::spectral::{band_energy, BandSpec};
use fmask::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmaskStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    Io = 5,
    /// Training diverged or the mask objective became non-finite.
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmaskBands {
    Radial = 0,
    Angular = 1,
}

/// Mask optimizer settings; start from `fmask_learn_config_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FmaskLearnConfig {
    pub lambda: f64,
    /// Regularizer order, 1 or 2.
    pub norm: u32,
    pub lr: f64,
    pub max_iter: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tol: f64,
    pub patience: usize,
}

/// Opaque trained classifier.
pub struct FmaskCheckpoint(Checkpoint);

/// Opaque frequency mask.
pub struct FmaskMask(Mask);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FmaskStatus {
    match e {
        Error::Shape { .. } | Error::NotPowerOfTwo(_) | Error::NonScalarLoss(_) => FmaskStatus::Shape,
        Error::Format { .. } | Error::Csv(_) | Error::Json(_) => FmaskStatus::Format,
        Error::Io { .. } | Error::Png(_) => FmaskStatus::Io,
        Error::Diverged { .. } | Error::NonFiniteObjective(_) => FmaskStatus::Numeric,
        _ => FmaskStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FmaskStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FmaskStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            FmaskStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            FmaskStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            FmaskStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies `s` with a terminating NUL into `buf` (truncating to `cap`) and
/// returns the full length excluding the NUL.
unsafe fn copy_str(s: &str, buf: *mut c_char, cap: usize) -> usize {
    if !buf.is_null() && cap > 0 {
        let n = s.len().min(cap - 1);
        ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
    }
    s.len()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fmask_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`; returns its
/// length. Pass a null `buf` to query the length.
#[no_mangle]
pub unsafe extern "C" fn fmask_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| copy_str(&e.borrow(), buf, cap))
}

#[no_mangle]
pub unsafe extern "C" fn fmask_checkpoint_load(path: *const c_char, out: *mut *mut FmaskCheckpoint) -> FmaskStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, FmaskCheckpoint(Checkpoint::load(&p)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmask_checkpoint_free(ck: *mut FmaskCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Image side length `d`; images are `d*d` row-major values in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn fmask_checkpoint_side(ck: *const FmaskCheckpoint) -> usize {
    ck.as_ref().map_or(0, |c| c.0.net.arch.side)
}

#[no_mangle]
pub unsafe extern "C" fn fmask_checkpoint_classes(ck: *const FmaskCheckpoint) -> usize {
    ck.as_ref().map_or(0, |c| c.0.net.arch.classes)
}

/// Writes the content hash (hex) into `buf`; returns its length.
#[no_mangle]
pub unsafe extern "C" fn fmask_checkpoint_hash(ck: *const FmaskCheckpoint, buf: *mut c_char, cap: usize) -> usize {
    ck.as_ref().map_or(0, |c| copy_str(&c.0.hash(), buf, cap))
}

/// Predicted class of each of `n` raw images, optionally filtered by `mask`
/// (may be null).
#[no_mangle]
pub unsafe extern "C" fn fmask_predict(
    ck: *const FmaskCheckpoint,
    mask: *const FmaskMask,
    pixels: *const f64,
    n: usize,
    out_labels: *mut u32,
) -> FmaskStatus {
    guard(|| {
        let ck = &borrow(ck, "checkpoint")?.0;
        let dd = ck.net.arch.side * ck.net.arch.side;
        let px = slice_arg(pixels, n * dd, "pixels")?;
        let out = slice_out(out_labels, n, "out_labels")?;
        let mut x = ck.normalize(px);
        if let Some(m) = mask.as_ref() {
            x = filter_images(&x, &m.0)?;
        }
        for (o, p) in out.iter_mut().zip(ck.net.predict(&x)?) {
            *o = p as u32;
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fmask_learn_config_default() -> FmaskLearnConfig {
    let c = MaskLearnConfig::default();
    FmaskLearnConfig {
        lambda: c.lambda,
        norm: u32::from(c.norm.order()),
        lr: c.lr,
        max_iter: c.max_iter,
        batch_size: c.batch_size,
        seed: c.seed,
        tol: c.tol,
        patience: c.patience,
    }
}

fn learn_config(c: &FmaskLearnConfig) -> Result<MaskLearnConfig, Fail> {
    let norm = match c.norm {
        1 => Norm::L1,
        2 => Norm::L2,
        other => return Err(Fail::Arg(format!("norm must be 1 or 2, got {other}"))),
    };
    Ok(MaskLearnConfig {
        lambda: c.lambda,
        norm,
        lr: c.lr,
        max_iter: c.max_iter,
        batch_size: c.batch_size,
        seed: c.seed,
        tol: c.tol,
        patience: c.patience,
    })
}

unsafe fn images(ck: &Checkpoint, pixels: *const f64, labels: *const u32, n: usize) -> Result<Vec<LabeledImage>, Fail> {
    let dd = ck.net.arch.side * ck.net.arch.side;
    let px = slice_arg(pixels, n * dd, "pixels")?;
    let ys = slice_arg(labels, n, "labels")?;
    Ok(px
        .chunks(dd.max(1))
        .zip(ys)
        .enumerate()
        .map(|(i, (p, &y))| LabeledImage { id: i as u64, pixels: p.to_vec(), label: y as usize })
        .collect())
}

/// Learns one mask shared by `n` raw images.
#[no_mangle]
pub unsafe extern "C" fn fmask_learn_global(
    ck: *const FmaskCheckpoint,
    pixels: *const f64,
    labels: *const u32,
    n: usize,
    config: *const FmaskLearnConfig,
    out: *mut *mut FmaskMask,
) -> FmaskStatus {
    guard(|| {
        let ck = &borrow(ck, "checkpoint")?.0;
        let cfg = learn_config(borrow(config, "config")?)?;
        let imgs = images(ck, pixels, labels, n)?;
        let o = learn_mask_global(ck, &imgs, &cfg)?;
        put(out, FmaskMask(o.mask))
    })
}

/// Learns the mask of one raw image. When the model misclassifies it,
/// `*out` is set to null and `*skipped` to 1.
#[no_mangle]
pub unsafe extern "C" fn fmask_learn_single(
    ck: *const FmaskCheckpoint,
    pixels: *const f64,
    label: u32,
    config: *const FmaskLearnConfig,
    out: *mut *mut FmaskMask,
    skipped: *mut u8,
) -> FmaskStatus {
    guard(|| {
        let ck = &borrow(ck, "checkpoint")?.0;
        let cfg = learn_config(borrow(config, "config")?)?;
        if out.is_null() || skipped.is_null() {
            return Err(Fail::Null("out"));
        }
        let img = images(ck, pixels, &label, 1)?.remove(0);
        match learn_mask_single(ck, &img, &cfg)? {
            SingleResult::Learned(o) => {
                *skipped = 0;
                put(out, FmaskMask(o.mask))
            }
            SingleResult::Skipped { .. } => {
                *skipped = 1;
                *out = ptr::null_mut();
                Ok(())
            }
        }
    })
}

/// A `d×d` mask from natural-order values; conjugate partners must match.
#[no_mangle]
pub unsafe extern "C" fn fmask_mask_from_values(d: usize, values: *const f64, out: *mut *mut FmaskMask) -> FmaskStatus {
    guard(|| {
        let v = slice_arg(values, d * d, "values")?;
        put(out, FmaskMask(Mask::from_values(d, v.to_vec())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmask_mask_load(path: *const c_char, out: *mut *mut FmaskMask) -> FmaskStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, FmaskMask(MaskFile::load(&p)?.mask))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmask_mask_complement(mask: *const FmaskMask, out: *mut *mut FmaskMask) -> FmaskStatus {
    guard(|| {
        let m = &borrow(mask, "mask")?.0;
        put(out, FmaskMask(complementary_mask(m)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmask_mask_free(mask: *mut FmaskMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

#[no_mangle]
pub unsafe extern "C" fn fmask_mask_side(mask: *const FmaskMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.side())
}

/// Copies the `d*d` values into `out` (capacity `cap`).
#[no_mangle]
pub unsafe extern "C" fn fmask_mask_values(mask: *const FmaskMask, out: *mut f64, cap: usize) -> FmaskStatus {
    guard(|| {
        let m = &borrow(mask, "mask")?.0;
        let v = m.values();
        if cap < v.len() {
            return Err(Fail::Arg(format!("buffer holds {cap} values, mask has {}", v.len())));
        }
        slice_out(out, v.len(), "out")?.copy_from_slice(v);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fmask_mask_l1(mask: *const FmaskMask) -> f64 {
    mask.as_ref().map_or(f64::NAN, |m| m.0.l1())
}

#[no_mangle]
pub unsafe extern "C" fn fmask_mask_zero_fraction(mask: *const FmaskMask) -> f64 {
    mask.as_ref().map_or(f64::NAN, |m| m.0.zero_fraction())
}

/// Filters `n` images (any scaling) through the mask.
#[no_mangle]
pub unsafe extern "C" fn fmask_mask_apply(
    mask: *const FmaskMask,
    images: *const f64,
    n: usize,
    out: *mut f64,
) -> FmaskStatus {
    guard(|| {
        let m = &borrow(mask, "mask")?.0;
        let len = n * m.side() * m.side();
        let x = slice_arg(images, len, "images")?;
        let o = slice_out(out, len, "out")?;
        if n > 0 {
            o.copy_from_slice(&filter_images(x, m)?);
        }
        Ok(())
    })
}

/// Per-band energies of the mask over `k` radial or angular bands.
#[no_mangle]
pub unsafe extern "C" fn fmask_mask_band_energy(
    mask: *const FmaskMask,
    kind: FmaskBands,
    k: usize,
    out: *mut f64,
) -> FmaskStatus {
    guard(|| {
        let m = &borrow(mask, "mask")?.0;
        let spec = match kind {
            FmaskBands::Radial => BandSpec::radial(m.side(), k)?,
            FmaskBands::Angular => BandSpec::angular(m.side(), k)?,
        };
        slice_out(out, k, "out")?.copy_from_slice(&band_energy(m.values(), &spec)?);
        Ok(())
    })
}
