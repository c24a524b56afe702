//! Datasets (synthetic blobs, IDX files, a binary container), forget/retain
//! splitting, accuracy metrics, and the experiment orchestrator behind the
//! CLI.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::DenseMatrix;
use crate::rng::{gaussian, rng_for};
use crate::trainer::model_accuracy;

mod experiment;
pub mod idx;
#[cfg(test)]
mod tests;

pub use experiment::{
    calibrated_init, checkpoint_path, dataset_for_seed, ensure_output_dirs, execute_method,
    load_config, run_experiment, run_experiment_opts, train_full_model, DataConfig,
    ExperimentConfig, Method, MethodMetrics, MetricsReport, ScrubSettings, TrainSettings,
    ENV_MEMORY_BUDGET, ENV_OUTPUT_DIR, RELEARN_CAP, RELEARN_THRESHOLD,
};
pub use idx::load_idx;

/// Which split a sample belongs to. Hold-out samples never enter training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Retain,
    Forget,
    Holdout,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Retain => write!(f, "retain"),
            SplitTag::Forget => write!(f, "forget"),
            SplitTag::Holdout => write!(f, "holdout"),
        }
    }
}

/// A labeled dataset with per-sample split tags and one-hot targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    /// One-hot rows matching `labels`; kept in sync by construction.
    pub targets: DenseMatrix,
    pub split_tags: Vec<SplitTag>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        inputs: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        split_tags: Vec<SplitTag>,
    ) -> Result<Dataset> {
        let n = inputs.rows();
        if labels.len() != n || split_tags.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset".into(),
                expected: format!("{n} labels and {n} split tags"),
                got: format!("{} labels, {} tags", labels.len(), split_tags.len()),
            });
        }
        let mut targets = DenseMatrix::zeros(n, num_classes);
        for (s, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::LabelRange {
                    label: y,
                    num_classes,
                });
            }
            targets[(s, y)] = 1.0;
        }
        Ok(Dataset {
            inputs,
            labels,
            targets,
            split_tags,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.split_tags.iter().filter(|t| **t == tag).count()
    }

    /// Gathers the samples carrying any of `tags`, preserving dataset order.
    pub fn select(&self, tags: &[SplitTag]) -> (DenseMatrix, Vec<usize>) {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&s| tags.contains(&self.split_tags[s]))
            .collect();
        let mut inputs = DenseMatrix::zeros(idx.len(), self.inputs.cols());
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &s) in idx.iter().enumerate() {
            inputs.row_mut(row).copy_from_slice(self.inputs.row(s));
            labels.push(self.labels[s]);
        }
        (inputs, labels)
    }
}

/// Isotropic unit-variance Gaussian clusters with mutually separated centers,
/// plus a disjoint hold-out of the same per-class size.
pub fn gen_blobs(
    num_classes: usize,
    images_per_class: usize,
    input_dim: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "blob generation needs num_classes >= 2, got {num_classes}"
        )));
    }
    if !(class_separation > 0.0) || !class_separation.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "class_separation must be positive and finite, got {class_separation}"
        )));
    }
    if images_per_class == 0 || input_dim == 0 {
        return Err(Error::InvalidConfig(
            "images_per_class and input_dim must be >= 1".into(),
        ));
    }

    // Candidate centers at per-coordinate scale sep/sqrt(dim) put typical
    // pairwise distances near sqrt(2)*sep, so the >= sep rejection below
    // fires occasionally instead of being vacuous or looping forever.
    let coord_scale = class_separation / (input_dim as f64).sqrt();
    let mut center_rng = rng_for(seed, "blob_centers");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let mut placed = false;
        for _attempt in 0..10_000 {
            let candidate: Vec<f64> = (0..input_dim)
                .map(|_| coord_scale * gaussian(&mut center_rng))
                .collect();
            let separated = centers.iter().all(|c| {
                let d2: f64 = c
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= class_separation
            });
            if separated {
                centers.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidConfig(format!(
                "could not place {num_classes} centers at separation {class_separation} in {input_dim} dimensions (gave up for class {class})"
            )));
        }
    }

    let n_train = num_classes * images_per_class;
    let n = 2 * n_train;
    let mut inputs = DenseMatrix::zeros(n, input_dim);
    let mut labels = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let mut sample_rng = rng_for(seed, "blob_samples");
    for (block, tag) in [(0, SplitTag::Retain), (n_train, SplitTag::Holdout)] {
        for class in 0..num_classes {
            for i in 0..images_per_class {
                let row = block + class * images_per_class + i;
                let out = inputs.row_mut(row);
                for (m, c) in out.iter_mut().zip(&centers[class]) {
                    *m = c + gaussian(&mut sample_rng);
                }
            }
        }
        for class in 0..num_classes {
            for _ in 0..images_per_class {
                labels.push(class);
                tags.push(tag);
            }
        }
    }
    Dataset::new(inputs, labels, num_classes, tags)
}

/// Retags training samples: forget classes go to the forget split, everything
/// else to retain. Hold-out tags are untouched.
pub fn split_forget(dataset: &Dataset, forget_classes: &[usize]) -> Result<Dataset> {
    if forget_classes.is_empty() {
        return Err(Error::InvalidConfig(
            "forget_classes must name at least one class".into(),
        ));
    }
    for &class in forget_classes {
        if class >= dataset.num_classes {
            return Err(Error::UnknownClass {
                class,
                num_classes: dataset.num_classes,
            });
        }
    }
    let mut out = dataset.clone();
    for (tag, &label) in out.split_tags.iter_mut().zip(&dataset.labels) {
        if *tag != SplitTag::Holdout {
            *tag = if forget_classes.contains(&label) {
                SplitTag::Forget
            } else {
                SplitTag::Retain
            };
        }
    }
    Ok(out)
}

fn filter_label(tags: &[SplitTag]) -> String {
    tags.iter()
        .map(SplitTag::to_string)
        .collect::<Vec<_>>()
        .join("+")
}

/// Fraction of the selected samples whose argmax logit matches the label
/// (ties break toward the lowest class index).
pub fn accuracy(model: &Model, dataset: &Dataset, tags: &[SplitTag]) -> Result<f64> {
    let (inputs, labels) = dataset.select(tags);
    if inputs.rows() == 0 {
        return Err(Error::EmptySplit {
            filter: filter_label(tags),
        });
    }
    model_accuracy(model, &inputs, &labels)
}

/// Per-class accuracy over the selected samples; `None` for classes with no
/// samples in the selection.
pub fn per_class_accuracy(
    model: &Model,
    dataset: &Dataset,
    tags: &[SplitTag],
) -> Result<Vec<Option<f64>>> {
    let (inputs, labels) = dataset.select(tags);
    if inputs.rows() == 0 {
        return Err(Error::EmptySplit {
            filter: filter_label(tags),
        });
    }
    let logits = model.forward(&inputs)?;
    let mut hits = vec![0usize; dataset.num_classes];
    let mut counts = vec![0usize; dataset.num_classes];
    for s in 0..inputs.rows() {
        let row = logits.row(s);
        let mut best = 0usize;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        counts[labels[s]] += 1;
        if best == labels[s] {
            hits[labels[s]] += 1;
        }
    }
    Ok(counts
        .iter()
        .zip(&hits)
        .map(|(&n, &h)| if n == 0 { None } else { Some(h as f64 / n as f64) })
        .collect())
}

const DATASET_MAGIC: &[u8; 8] = b"NTKDATA1";

fn tag_code(tag: SplitTag) -> u8 {
    match tag {
        SplitTag::Retain => 0,
        SplitTag::Forget => 1,
        SplitTag::Holdout => 2,
    }
}

fn tag_from_code(code: u8) -> Option<SplitTag> {
    match code {
        0 => Some(SplitTag::Retain),
        1 => Some(SplitTag::Forget),
        2 => Some(SplitTag::Holdout),
        _ => None,
    }
}

/// Writes the binary dataset container: 8-byte magic, u64 LE n/input_dim/
/// num_classes, n u64 labels, n tag bytes, then row-major f64 LE inputs.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let n = dataset.len();
    let dim = dataset.input_dim();
    let mut bytes = Vec::with_capacity(32 + 9 * n + 8 * n * dim);
    bytes.extend_from_slice(DATASET_MAGIC);
    for v in [n as u64, dim as u64, dataset.num_classes as u64] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &label in &dataset.labels {
        bytes.extend_from_slice(&(label as u64).to_le_bytes());
    }
    for &tag in &dataset.split_tags {
        bytes.push(tag_code(tag));
    }
    for v in dataset.inputs.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: &str| Error::BadCheckpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    };
    if bytes.len() < 8 || &bytes[..8] != DATASET_MAGIC {
        return Err(bad("missing dataset container magic"));
    }
    let mut pos = 8;
    let mut take_u64 = |bytes: &[u8]| -> Option<u64> {
        let v = bytes.get(pos..pos + 8)?;
        pos += 8;
        Some(u64::from_le_bytes(v.try_into().unwrap()))
    };
    let header = (
        take_u64(&bytes),
        take_u64(&bytes),
        take_u64(&bytes),
    );
    let (Some(n), Some(dim), Some(num_classes)) = header else {
        return Err(bad("header ends before n/input_dim/num_classes"));
    };
    let (n, dim, num_classes) = (n as usize, dim as usize, num_classes as usize);
    let need = 32 + 9 * n + 8 * n * dim;
    if bytes.len() != need {
        return Err(Error::TruncatedFile {
            path: path.display().to_string(),
            declared: need,
            found: bytes.len(),
        });
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let start = 32 + 8 * i;
        labels.push(u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap()) as usize);
    }
    let tags_start = 32 + 8 * n;
    let mut tags = Vec::with_capacity(n);
    for i in 0..n {
        tags.push(tag_from_code(bytes[tags_start + i]).ok_or_else(|| bad("unknown split tag code"))?);
    }
    let data: Vec<f64> = bytes[tags_start + n..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Dataset::new(DenseMatrix::from_vec(n, dim, data), labels, num_classes, tags)
}
