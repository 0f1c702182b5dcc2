//! MNIST in the IDX format.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for 3-D unsigned
//! byte images, `0x00000801` for 1-D labels), one `u32` per dimension, then
//! the raw bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Custom,
}

/// Images `[N, ...]` with one integer label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<u8>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(FormatError::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            }
            .into());
        }
        Ok(Dataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Images and labels for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images = self.images.gather_outer(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        Ok((images, labels))
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Ok(Dataset {
            images: self.images.slice_outer(0, n)?,
            labels: self.labels[..n].to_vec(),
            split: self.split,
        })
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| {
            FormatError::Truncated {
                expected: offset + 4,
                found: bytes.len(),
            }
            .into()
        })
}

/// Parses an IDX image file into `[N, 1, 28, 28]` pixels scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<Tensor<f32>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        }
        .into());
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)?;
    let cols = be_u32(bytes, 12)?;
    if rows as usize != SIDE || cols as usize != SIDE {
        return Err(FormatError::BadDimensions { rows, cols }.into());
    }
    let expected = 16 + count * SIDE * SIDE;
    if bytes.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let pixels = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new([count, 1, SIDE, SIDE], pixels)
}

/// Parses an IDX label file; every label must be a digit.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(FormatError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        }
        .into());
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let labels = bytes[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(FormatError::LabelOutOfRange(bad).into());
    }
    Ok(labels)
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(FormatError::MissingFile(path).into());
    }
    fs::read(&path).map_err(|e| Error::io(path, e))
}

/// Loads one split from an image file and a label file.
pub fn load_split(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset> {
    let images = parse_images(&read(dir, images)?)?;
    let labels = parse_labels(&read(dir, labels)?)?;
    Dataset::new(images, labels, split)
}

/// Loads the train and test splits from the four standard IDX files.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_split(dir, TRAIN_IMAGES, TRAIN_LABELS, Split::Train)?;
    let test = load_split(dir, TEST_IMAGES, TEST_LABELS, Split::Test)?;
    Ok((train, test))
}

/// Serializes images (`[N, 28, 28]` bytes) in IDX form.
pub fn encode_images(pixels: &[u8], count: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, SIDE as u32, SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
