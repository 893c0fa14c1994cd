use std::path::Path;

use super::Dataset;
use crate::error::{IdxError, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], words: usize, magic: u32) -> Result<Vec<u32>, IdxError> {
    let need = 4 * words;
    if bytes.len() < need {
        return Err(IdxError::TruncatedInput {
            expected: need,
            found: bytes.len(),
        });
    }
    let vals: Vec<u32> = bytes[..need]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    if vals[0] != magic {
        return Err(IdxError::BadMagic {
            found: vals[0],
            expected: magic,
        });
    }
    Ok(vals[1..].to_vec())
}

fn body(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], IdxError> {
    let expected = offset + len;
    if bytes.len() < expected {
        return Err(IdxError::TruncatedInput {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..expected])
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), IdxError> {
    let dims = header(bytes, 4, IDX_IMAGES_MAGIC)?;
    let (n, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let len = n.saturating_mul(rows).saturating_mul(cols);
    Ok((n, rows, cols, body(bytes, 16, len)?.to_vec()))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let dims = header(bytes, 2, IDX_LABELS_MAGIC)?;
    Ok(body(bytes, 8, dims[0] as usize)?.to_vec())
}

/// Loads a grayscale IDX image/label pair as `[N, 1, H, W]`. The class count
/// is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&std::fs::read(images_path).map_err(IdxError::Io)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path).map_err(IdxError::Io)?)?;
    if labels.len() != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.len(),
        }
        .into());
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    let labels: Vec<i32> = labels.into_iter().map(i32::from).collect();
    Dataset::new(
        Tensor::from_vec(pixels, &[n, 1, rows, cols])?,
        Tensor::from_vec(labels, &[n])?,
        classes,
    )
}
