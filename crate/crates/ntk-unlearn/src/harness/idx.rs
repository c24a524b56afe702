//! Reader for the IDX image/label file pair format (big-endian headers,
//! one byte per pixel or label).

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{Dataset, SplitTag};
use crate::numerics::DenseMatrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], pos: usize) -> Option<u32> {
    let v = bytes.get(pos..pos + 4)?;
    Some(u32::from_be_bytes(v.try_into().unwrap()))
}

fn check_header(
    path: &Path,
    bytes: &[u8],
    expected_magic: u32,
    header_words: usize,
) -> Result<Vec<usize>> {
    let header_len = 4 * header_words;
    if bytes.len() < header_len {
        return Err(Error::TruncatedFile {
            path: path.display().to_string(),
            declared: header_len,
            found: bytes.len(),
        });
    }
    let magic = read_u32_be(bytes, 0).unwrap();
    if magic != expected_magic {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: expected_magic,
            got: magic,
        });
    }
    Ok((1..header_words)
        .map(|w| read_u32_be(bytes, 4 * w).unwrap() as usize)
        .collect())
}

/// Loads an IDX image/label pair as a flat `[0, 1]`-scaled dataset, all
/// samples tagged retain. `limit_per_class` keeps the first matches per class
/// in file order. With `num_classes: None` the class count is inferred as
/// max label + 1.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit_per_class: Option<usize>,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;

    let dims = check_header(images_path, &image_bytes, IMAGES_MAGIC, 4)?;
    let (n_images, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = rows * cols;
    let expected = 16 + n_images * pixels;
    if image_bytes.len() < expected {
        return Err(Error::TruncatedFile {
            path: images_path.display().to_string(),
            declared: expected,
            found: image_bytes.len(),
        });
    }

    let dims = check_header(labels_path, &label_bytes, LABELS_MAGIC, 2)?;
    let n_labels = dims[0];
    let expected = 8 + n_labels;
    if label_bytes.len() < expected {
        return Err(Error::TruncatedFile {
            path: labels_path.display().to_string(),
            declared: expected,
            found: label_bytes.len(),
        });
    }

    if n_images != n_labels {
        return Err(Error::DimensionMismatch {
            context: "idx image/label pair".into(),
            expected: format!("{n_images} labels"),
            got: format!("{n_labels}"),
        });
    }

    let raw_labels: Vec<usize> = label_bytes[8..8 + n_labels]
        .iter()
        .map(|&b| b as usize)
        .collect();
    let num_classes = match num_classes {
        Some(c) => {
            for &y in &raw_labels {
                if y >= c {
                    return Err(Error::LabelRange {
                        label: y,
                        num_classes: c,
                    });
                }
            }
            c
        }
        None => raw_labels.iter().max().map_or(0, |m| m + 1),
    };

    let keep: Vec<usize> = match limit_per_class {
        None => (0..n_images).collect(),
        Some(limit) => {
            let mut taken = vec![0usize; num_classes];
            (0..n_images)
                .filter(|&i| {
                    if taken[raw_labels[i]] < limit {
                        taken[raw_labels[i]] += 1;
                        true
                    } else {
                        false
                    }
                })
                .collect()
        }
    };

    let mut inputs = DenseMatrix::zeros(keep.len(), pixels);
    let mut labels = Vec::with_capacity(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let start = 16 + i * pixels;
        let out = inputs.row_mut(row);
        for (o, &b) in out.iter_mut().zip(&image_bytes[start..start + pixels]) {
            *o = b as f64 / 255.0;
        }
        labels.push(raw_labels[i]);
    }
    let tags = vec![SplitTag::Retain; keep.len()];
    Dataset::new(inputs, labels, num_classes, tags)
}
