//! Report artifacts: PNG figures, CSV tables, JSON summaries and the run
//! manifest. All writers are deterministic and write atomically.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Version of the `summary.json` / `manifest.json` layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Colormap {
    Grayscale,
    /// Blue below zero, white at zero, red above.
    Diverging,
}

/// Value range mapped onto the colormap. Share one across a figure set so
/// panels are comparable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorRange {
    pub lo: f64,
    pub hi: f64,
}

impl ColorRange {
    /// Min..max for grayscale; symmetric `±max|v|` for diverging maps.
    pub fn fit<'a>(grids: impl IntoIterator<Item = &'a [f64]>, cmap: Colormap) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for g in grids {
            for &v in g {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            return ColorRange { lo: 0.0, hi: 0.0 };
        }
        match cmap {
            Colormap::Grayscale => ColorRange { lo, hi },
            Colormap::Diverging => {
                let m = lo.abs().max(hi.abs());
                ColorRange { lo: -m, hi: m }
            }
        }
    }
}

fn color(v: f64, range: ColorRange, cmap: Colormap) -> [u8; 3] {
    let span = range.hi - range.lo;
    let t = if span > 0.0 { ((v - range.lo) / span).clamp(0.0, 1.0) } else { 0.5 };
    let q = |x: f64| (x * 255.0).round() as u8;
    match cmap {
        Colormap::Grayscale => {
            let g = if span > 0.0 { q(t) } else { 128 };
            [g, g, g]
        }
        Colormap::Diverging => {
            // t = 0.5 is exactly white.
            if t < 0.5 {
                let s = t / 0.5;
                [q(s), q(s), 255]
            } else {
                let s = (1.0 - t) / 0.5;
                [255, q(s), q(s)]
            }
        }
    }
}

/// Encodes a `rows × cols` grid as an 8-bit PNG, each cell drawn as a
/// `scale × scale` block.
pub fn encode_png(
    grid: &[f64],
    rows: usize,
    cols: usize,
    cmap: Colormap,
    range: ColorRange,
    scale: usize,
) -> Result<Vec<u8>> {
    if grid.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::shape("render_png", format!("{} values for a {rows}x{cols} grid", grid.len())));
    }
    if let Some(i) = grid.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid entry {i} is not finite")));
    }
    let scale = scale.max(1);
    let (w, h) = (cols * scale, rows * scale);
    let channels = if cmap == Colormap::Grayscale { 1 } else { 3 };
    let mut pixels = Vec::with_capacity(w * h * channels);
    for r in 0..h {
        for c in 0..w {
            let rgb = color(grid[(r / scale) * cols + c / scale], range, cmap);
            pixels.extend_from_slice(&rgb[..channels]);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        enc.set_filter(png::FilterType::NoFilter);
        enc.set_compression(png::Compression::Default);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&pixels)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn render_png(grid: &[f64], side: usize, cmap: Colormap, range: ColorRange, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(grid, side, side, cmap, range, 8)?)
}

/// Rasterizes a bar chart of non-negative values into a `height × bars`
/// grid of 0/1 cells (1 = bar).
pub fn bar_grid(values: &[f64], height: usize, top: f64) -> Vec<f64> {
    let n = values.len();
    let mut g = vec![0.0; height * n];
    for (c, &v) in values.iter().enumerate() {
        let filled = if top > 0.0 { ((v / top).clamp(0.0, 1.0) * height as f64).round() as usize } else { 0 };
        for r in height - filled..height {
            g[r * n + c] = 1.0;
        }
    }
    g
}

/// Places equally sized grids side by side with a one-cell gap of `fill`.
pub fn hstack(grids: &[Vec<f64>], rows: usize, cols: usize, fill: f64) -> (Vec<f64>, usize) {
    let total = grids.len() * (cols + 1) - 1;
    let mut out = vec![fill; rows * total];
    for (k, g) in grids.iter().enumerate() {
        for r in 0..rows {
            let off = r * total + k * (cols + 1);
            out[off..off + cols].copy_from_slice(&g[r * cols..][..cols]);
        }
    }
    (out, total)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Serializes CSV rows into memory, then writes atomically.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Tracks files a command reads and writes, then emits `manifest.json`
/// listing each with its SHA-256.
#[derive(Debug)]
pub struct Manifest {
    root: PathBuf,
    command: String,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(root: &Path, command: &str, seed: u64) -> Self {
        Manifest {
            root: root.to_path_buf(),
            command: command.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path of an output file under the run root, recorded for the manifest.
    pub fn output(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let p = self.root.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn entries(&self, paths: &[PathBuf]) -> Result<Vec<serde_json::Value>> {
        let mut v = Vec::with_capacity(paths.len());
        for p in paths {
            let shown = p.strip_prefix(&self.root).unwrap_or(p);
            v.push(serde_json::json!({
                "path": shown.to_string_lossy(),
                "sha256": sha256_file(p)?,
            }));
        }
        Ok(v)
    }

    pub fn write(self) -> Result<PathBuf> {
        let value = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "inputs": self.entries(&self.inputs)?,
            "outputs": self.entries(&self.outputs)?,
        });
        let path = self.root.join("manifest.json");
        write_json(&path, &value)?;
        Ok(path)
    }
}
