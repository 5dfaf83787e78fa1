//! Reading datasets from disk.

use std::path::Path;

use fediskit_core::data::{parse_idx, LabeledSample};

use crate::{Error, Result};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image file and its label file. Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Vec<LabeledSample>> {
    parse_idx(&read_file(images)?, &read_file(labels)?).map_err(|source| Error::Dataset {
        path: images.to_path_buf(),
        source,
    })
}
