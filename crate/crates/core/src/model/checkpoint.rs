//! `SMCK` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SMCK" | version: u8 | desc_len: u32 | descriptor (UTF-8)
//!        | tensors: u32 | per tensor: ndim: u32, dims: u32 × ndim
//!        | weights: f64 × Σ numel
//!        | metadata: key=value lines, sorted by key, to end of file
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Architecture, Network};
use crate::autodiff::Tensor;
use crate::data::augment::{AugmentKind, AugmentPolicy, PgdParams};
use crate::error::{Error, Result};
use crate::io::{parse_kv, write_atomic, Reader};

pub const MAGIC: &[u8; 4] = b"SMCK";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub augment: AugmentPolicy,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub mean: f64,
    pub std: f64,
}

impl CheckpointMeta {
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let a = &self.augment;
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("augment", a.kind.to_string());
        put("max_shift", a.max_shift.to_string());
        put("max_angle", format!("{:?}", a.max_angle));
        put("scale_min", format!("{:?}", a.scale_range.0));
        put("scale_max", format!("{:?}", a.scale_range.1));
        put("eps", format!("{:?}", a.pgd.eps));
        put("alpha", format!("{:?}", a.pgd.alpha));
        put("steps", a.pgd.steps.to_string());
        put("seed", self.seed.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("max_lr", format!("{:?}", self.max_lr));
        put("best_epoch", self.best_epoch.to_string());
        put("best_val_loss", format!("{:?}", self.best_val_loss));
        put("mean", format!("{:?}", self.mean));
        put("std", format!("{:?}", self.std));
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>, offset: usize) -> Result<Self> {
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str, offset: usize) -> Result<T> {
            kv.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(offset, format!("metadata key {key:?} missing or malformed")))
        }
        Ok(CheckpointMeta {
            augment: AugmentPolicy {
                kind: get::<AugmentKind>(kv, "augment", offset)?,
                max_shift: get(kv, "max_shift", offset)?,
                max_angle: get(kv, "max_angle", offset)?,
                scale_range: (get(kv, "scale_min", offset)?, get(kv, "scale_max", offset)?),
                pgd: PgdParams {
                    eps: get(kv, "eps", offset)?,
                    alpha: get(kv, "alpha", offset)?,
                    steps: get(kv, "steps", offset)?,
                },
            },
            seed: get(kv, "seed", offset)?,
            epochs: get(kv, "epochs", offset)?,
            batch_size: get(kv, "batch_size", offset)?,
            max_lr: get(kv, "max_lr", offset)?,
            best_epoch: get(kv, "best_epoch", offset)?,
            best_val_loss: get(kv, "best_val_loss", offset)?,
            mean: get(kv, "mean", offset)?,
            std: get(kv, "std", offset)?,
        })
    }
}

/// Trained network plus the context needed to reuse it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: Network,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn normalize(&self, pixels: &[f64]) -> Vec<f64> {
        crate::data::normalize(pixels, self.meta.mean, self.meta.std)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let desc = self.net.arch.descriptor();
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend_from_slice(&(self.net.params.len() as u32).to_le_bytes());
        for p in &self.net.params {
            out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for p in &self.net.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (k, v) in self.meta.to_kv() {
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "not an SMCK checkpoint (bad magic)"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let desc_len = r.u32()? as usize;
        let desc_at = r.offset();
        let desc =
            std::str::from_utf8(r.take(desc_len)?).map_err(|_| Error::format(desc_at, "descriptor is not UTF-8"))?;
        let arch = Architecture::parse_descriptor(desc).map_err(|e| Error::format(desc_at, e.to_string()))?;
        let count_at = r.offset();
        let count = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            shapes.push(shape);
        }
        if shapes != arch.param_shapes() {
            return Err(Error::format(count_at, "tensor shapes do not match the architecture descriptor"));
        }
        let mut params = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            params.push(Tensor::new(shape, data)?);
        }
        let meta_at = r.offset();
        let text = std::str::from_utf8(r.rest()).map_err(|_| Error::format(meta_at, "metadata is not UTF-8"))?;
        let kv = parse_kv(text, meta_at)?;
        let meta = CheckpointMeta::from_kv(&kv, meta_at)?;
        Ok(Checkpoint { net: Network::from_params(arch, params)?, meta })
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
