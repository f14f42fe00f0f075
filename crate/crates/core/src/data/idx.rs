//! The IDX container used by MNIST-family datasets.
//!
//! Layout: two zero bytes, an element type code, the number of dimensions,
//! then one big-endian `u32` per dimension, then the raw payload. Only the
//! unsigned-byte element type (`0x08`) is supported.

use std::collections::BTreeSet;
use std::path::Path;

use super::{ClassId, Dataset, Split};
use crate::error::{Error, IdxError, Result};
use crate::tensor::Matrix;

pub const TYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn new(dims: Vec<u32>, data: Vec<u8>) -> Result<Self, IdxError> {
        let expected = element_count(&dims);
        if expected != data.len() {
            return Err(IdxError::Truncated {
                expected,
                actual: data.len(),
            });
        }
        Ok(IdxTensor { dims, data })
    }
}

fn element_count(dims: &[u32]) -> usize {
    dims.iter().map(|&d| d as usize).product()
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            expected: 4,
            actual: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic[0] != 0 || magic[1] != 0 || magic[3] == 0 {
        return Err(IdxError::BadMagic(magic));
    }
    if magic[2] != TYPE_U8 {
        return Err(IdxError::UnsupportedType(magic[2]));
    }
    let ndim = magic[3] as usize;
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(IdxError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let dims: Vec<u32> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let expected = header_len + element_count(&dims);
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes(bytes.len() - expected));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[header_len..].to_vec(),
    })
}

pub fn write_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&[0, 0, TYPE_U8, tensor.dims.len() as u8]);
    for d in &tensor.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

fn read_file(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_idx(&bytes)?)
}

/// Builds a dataset from an image tensor and a label vector. Pixels are
/// scaled by 1/255; the class catalog is the sorted set of label values.
pub fn dataset_from_idx(images: &IdxTensor, labels: &IdxTensor, split: Split) -> Result<Dataset> {
    if labels.dims.len() != 1 {
        return Err(IdxError::LabelRank(labels.dims.len()).into());
    }
    let n_images = images.dims[0] as usize;
    let n_labels = labels.dims[0] as usize;
    if n_images != n_labels {
        return Err(IdxError::CountMismatch {
            images: n_images,
            labels: n_labels,
        }
        .into());
    }
    let width = element_count(&images.dims[1..]);
    let values: Vec<f64> = images.data.iter().map(|&b| b as f64 / 255.0).collect();
    let features = Matrix::new(n_images, width, values)?;
    let catalog: Vec<ClassId> = labels
        .data
        .iter()
        .map(|&l| ClassId(l as u32))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dense = labels
        .data
        .iter()
        .map(|&l| catalog.binary_search(&ClassId(l as u32)).unwrap())
        .collect();
    Dataset::new(features, dense, catalog, split)
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    dataset_from_idx(&images, &labels, split)
}
