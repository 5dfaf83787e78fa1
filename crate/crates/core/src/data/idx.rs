//! IDX container decoding (the MNIST distribution format).

use alloc::format;
use alloc::vec::Vec;

use super::LabeledSample;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated header at byte {offset}")))
}

/// Decodes an image/label IDX pair. Pixel bytes are scaled to `[0, 1]` and
/// each image is flattened row-major.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Vec<LabeledSample>> {
    let magic = read_u32(images, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let magic = read_u32(labels, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n_images = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let n_labels = read_u32(labels, 4)? as usize;
    if n_images != n_labels {
        return Err(Error::Inconsistent(format!(
            "{n_images} images but {n_labels} labels"
        )));
    }
    let dim = rows * cols;
    let pixels = &images[16..];
    let label_bytes = &labels[8..];
    if pixels.len() != n_images * dim {
        return Err(Error::Format(format!(
            "image payload is {} bytes, header implies {}",
            pixels.len(),
            n_images * dim
        )));
    }
    if label_bytes.len() != n_labels {
        return Err(Error::Format(format!(
            "label payload is {} bytes, header implies {n_labels}",
            label_bytes.len()
        )));
    }
    // dim == 0 only makes sense for an empty file
    if dim == 0 {
        return Ok(Vec::new());
    }
    Ok(pixels
        .chunks_exact(dim)
        .zip(label_bytes)
        .map(|(px, &label)| LabeledSample {
            features: px.iter().map(|&p| f64::from(p) / 255.0).collect(),
            label: usize::from(label),
        })
        .collect())
}

/// Encodes raw pixel rows as an IDX image file.
pub fn encode_idx_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        debug_assert_eq!(img.len(), (rows * cols) as usize);
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
