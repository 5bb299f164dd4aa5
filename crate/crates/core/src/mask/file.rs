//! `SMSK` mask files.
//!
//! ```text
//! "SMSK" | version: u8 | d: u32 | values: f64 × d² (row-major, natural order)
//!        | metadata: key=value lines, sorted by key, to end of file
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{Mask, Norm};
use crate::data::augment::AugmentKind;
use crate::error::{Error, Result};
use crate::io::{parse_kv, write_atomic, Reader};

pub const MAGIC: &[u8; 4] = b"SMSK";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskMeta {
    pub lambda: f64,
    pub norm: Norm,
    pub seed: u64,
    /// SHA-256 of the source checkpoint bytes.
    pub checkpoint: String,
    /// `None` for a global mask.
    pub image: Option<u64>,
    pub label: Option<usize>,
    /// Augmentation policy of the source model.
    pub model: Option<AugmentKind>,
}

impl MaskMeta {
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert("lambda".into(), format!("{:?}", self.lambda));
        kv.insert("p".into(), self.norm.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        kv.insert("checkpoint".into(), self.checkpoint.clone());
        kv.insert("image".into(), self.image.map_or_else(|| "global".to_string(), |i| i.to_string()));
        if let Some(l) = self.label {
            kv.insert("label".into(), l.to_string());
        }
        if let Some(m) = self.model {
            kv.insert("model".into(), m.to_string());
        }
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>, offset: usize) -> Result<Self> {
        let bad = |key: &str| Error::format(offset, format!("metadata key {key:?} missing or malformed"));
        let req = |key: &str| kv.get(key).ok_or_else(|| bad(key));
        let image = match req("image")?.as_str() {
            "global" => None,
            s => Some(s.parse().map_err(|_| bad("image"))?),
        };
        Ok(MaskMeta {
            lambda: req("lambda")?.parse().map_err(|_| bad("lambda"))?,
            norm: req("p")?.parse().map_err(|_| bad("p"))?,
            seed: req("seed")?.parse().map_err(|_| bad("seed"))?,
            checkpoint: req("checkpoint")?.clone(),
            image,
            label: kv.get("label").map(|s| s.parse().map_err(|_| bad("label"))).transpose()?,
            model: kv.get("model").map(|s| s.parse().map_err(|_| bad("model"))).transpose()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskFile {
    pub mask: Mask,
    pub meta: MaskMeta,
}

impl MaskFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.mask.side();
        let mut out = Vec::with_capacity(9 + 8 * d * d + 128);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.mask.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (k, v) in self.meta.to_kv() {
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "not an SMSK mask (bad magic)"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported mask version {version}")));
        }
        let d = r.u32()? as usize;
        if d == 0 || d > 1 << 12 {
            return Err(Error::format(5, format!("implausible mask side {d}")));
        }
        let at = r.offset();
        let mut values = Vec::with_capacity(d * d);
        for _ in 0..d * d {
            values.push(r.f64()?);
        }
        let mask = Mask::from_values(d, values).map_err(|e| Error::format(at, e.to_string()))?;
        let meta_at = r.offset();
        let text = std::str::from_utf8(r.rest()).map_err(|_| Error::format(meta_at, "metadata is not UTF-8"))?;
        let meta = MaskMeta::from_kv(&parse_kv(text, meta_at)?, meta_at)?;
        Ok(MaskFile { mask, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// `u,v,value` rows in natural frequency order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["u", "v", "value"])?;
        let d = self.mask.side();
        for u in 0..d {
            for v in 0..d {
                csv.write_record([u.to_string(), v.to_string(), format!("{:?}", self.mask.get(u, v))])?;
            }
        }
        csv.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
        Ok(())
    }
}
