//! IDX (`*-ubyte`) reader for MNIST-style image and label files.

use std::collections::BTreeMap;
use std::path::Path;

use super::{DatasetSplit, LabeledImage, IMAGE_SIDE};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset, "truncated header"))
}

/// Image tensor of an IDX file: `count` images of `rows×cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            16 + body.len(),
            format!("truncated image data: header promises {need} bytes, found {}", body.len()),
        ));
    }
    Ok(IdxImages { count, rows, cols, pixels: body[..need].to_vec() })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::format(
            8 + body.len(),
            format!("truncated label data: header promises {count} labels, found {}", body.len()),
        ));
    }
    Ok(body[..count].to_vec())
}

/// Zero-pads a `rows×cols` byte image symmetrically to `side×side`, scaling to `[0, 1]`.
pub fn pad_to_side(src: &[u8], rows: usize, cols: usize, side: usize) -> Vec<f64> {
    let top = (side - rows) / 2;
    let left = (side - cols) / 2;
    let mut out = vec![0.0; side * side];
    for r in 0..rows {
        for c in 0..cols {
            out[(r + top) * side + c + left] = src[r * cols + c] as f64 / 255.0;
        }
    }
    out
}

/// Builds a split from in-memory IDX buffers. Classes in `whitelist` are
/// remapped to `0..whitelist.len()` in whitelist order; at most
/// `cap_per_class` images per class are kept, in file order.
pub fn split_from_bytes(
    image_bytes: &[u8],
    label_bytes: &[u8],
    whitelist: &[u8],
    cap_per_class: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let images = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != images.count {
        return Err(Error::format(
            4,
            format!("label count {} does not match image count {}", labels.len(), images.count),
        ));
    }
    if images.rows > IMAGE_SIDE || images.cols > IMAGE_SIDE {
        return Err(Error::format(8, format!("images are {}x{}, larger than {IMAGE_SIDE}", images.rows, images.cols)));
    }
    if whitelist.is_empty() {
        return Err(Error::InvalidArgument("class whitelist is empty".into()));
    }
    let remap: BTreeMap<u8, usize> = whitelist.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut taken = vec![0usize; whitelist.len()];
    let px = images.rows * images.cols;
    let mut out = Vec::new();
    for (i, &raw) in labels.iter().enumerate() {
        let Some(&label) = remap.get(&raw) else { continue };
        if taken[label] >= cap_per_class {
            continue;
        }
        taken[label] += 1;
        out.push(LabeledImage {
            id: i as u64,
            pixels: pad_to_side(&images.pixels[i * px..][..px], images.rows, images.cols, IMAGE_SIDE),
            label,
        });
    }
    DatasetSplit::from_images(out, IMAGE_SIDE, whitelist.len(), seed)
}

pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    whitelist: &[u8],
    cap_per_class: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let ib = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lb = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    split_from_bytes(&ib, &lb, whitelist, cap_per_class, seed)
}

/// Serializes images and labels in IDX layout (used to build fixtures).
pub fn encode(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut ib = Vec::with_capacity(16 + images.len() * rows * cols);
    ib.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    ib.extend_from_slice(&(images.len() as u32).to_be_bytes());
    ib.extend_from_slice(&(rows as u32).to_be_bytes());
    ib.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        ib.extend_from_slice(im);
    }
    let mut lb = Vec::with_capacity(8 + labels.len());
    lb.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lb.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lb.extend_from_slice(labels);
    (ib, lb)
}
