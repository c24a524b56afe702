//! Per-dataset Jacobians, the kernel blocks between retain and forget sets,
//! a memory estimator, and a binary kernel dump for offline inspection.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Model, ParamMask};
use crate::numerics::{gram, DenseMatrix};

/// Per-sample, per-class output gradients over masked parameters.
///
/// Row layout is sample-major, class-minor: row = sample·C + class.
#[derive(Debug, Clone)]
pub struct Jacobian {
    pub matrix: DenseMatrix,
    pub n: usize,
    pub num_classes: usize,
    pub mask_strategy: String,
    pub d_masked: usize,
}

/// Gram matrix between two Jacobians.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub matrix: DenseMatrix,
    pub lhs_id: String,
    pub rhs_id: String,
}

/// Assembles the Jacobian of a dataset split in sample blocks.
///
/// The result is independent of `block_size`, bitwise: each row only ever
/// depends on its own sample's forward/backward pass.
pub fn assemble_jacobian(
    model: &Model,
    inputs: &DenseMatrix,
    mask: &ParamMask,
    block_size: usize,
) -> Result<Jacobian> {
    if block_size == 0 {
        return Err(Error::InvalidConfig("block_size must be >= 1".into()));
    }
    let n = inputs.rows();
    let c = model.spec.num_classes;
    let mut matrix = DenseMatrix::zeros(n * c, mask.len());
    let mut start = 0;
    while start < n {
        let end = (start + block_size).min(n);
        let mut block = DenseMatrix::zeros(end - start, inputs.cols());
        for (bi, s) in (start..end).enumerate() {
            block.row_mut(bi).copy_from_slice(inputs.row(s));
        }
        let jac = model.per_sample_jacobian(&block, mask)?;
        for r in 0..jac.rows() {
            matrix.row_mut(start * c + r).copy_from_slice(jac.row(r));
        }
        start = end;
    }
    Ok(Jacobian {
        matrix,
        n,
        num_classes: c,
        mask_strategy: mask.strategy_name().to_string(),
        d_masked: mask.len(),
    })
}

/// The three kernel blocks of the scrub update: retain-retain, retain-forget,
/// forget-forget.
pub fn kernel_blocks(j_r: &Jacobian, j_f: &Jacobian) -> Result<(Kernel, Kernel, Kernel)> {
    if j_r.d_masked != j_f.d_masked {
        return Err(Error::DimensionMismatch {
            context: "kernel_blocks".into(),
            expected: format!("shared d_masked {}", j_r.d_masked),
            got: format!("{}", j_f.d_masked),
        });
    }
    if j_r.num_classes != j_f.num_classes {
        return Err(Error::DimensionMismatch {
            context: "kernel_blocks".into(),
            expected: format!("shared class count {}", j_r.num_classes),
            got: format!("{}", j_f.num_classes),
        });
    }
    let k_rr = Kernel {
        matrix: gram(&j_r.matrix, &j_r.matrix)?,
        lhs_id: "retain".into(),
        rhs_id: "retain".into(),
    };
    let k_rf = Kernel {
        matrix: gram(&j_r.matrix, &j_f.matrix)?,
        lhs_id: "retain".into(),
        rhs_id: "forget".into(),
    };
    let k_ff = Kernel {
        matrix: gram(&j_f.matrix, &j_f.matrix)?,
        lhs_id: "forget".into(),
        rhs_id: "forget".into(),
    };
    Ok((k_rr, k_rf, k_ff))
}

/// Bytes needed by the dense scrub pipeline: both Jacobians plus the three
/// kernel blocks, at 8 bytes per entry.
pub fn memory_estimate(n_r: usize, n_f: usize, c: usize, d_masked: usize) -> u64 {
    let rc = (n_r * c) as u64;
    let fc = (n_f * c) as u64;
    let d = d_masked as u64;
    8 * ((rc + fc) * d + rc * rc + rc * fc + fc * fc)
}

const KERNEL_MAGIC: &[u8; 8] = b"NTKKRNL1";

/// Writes a kernel block: 8-byte magic, u64 LE rows, u64 LE cols,
/// length-prefixed lhs/rhs labels, then row-major 64-bit LE values.
pub fn dump_kernel(kernel: &Kernel, path: &Path) -> Result<()> {
    let m = &kernel.matrix;
    let mut bytes = Vec::with_capacity(40 + 8 * m.data().len());
    bytes.extend_from_slice(KERNEL_MAGIC);
    bytes.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for label in [&kernel.lhs_id, &kernel.rhs_id] {
        bytes.extend_from_slice(&(label.len() as u64).to_le_bytes());
        bytes.extend_from_slice(label.as_bytes());
    }
    for v in m.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_kernel(path: &Path) -> Result<Kernel> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: String| Error::BadCheckpoint {
        path: path.display().to_string(),
        reason,
    };
    if bytes.len() < 8 || &bytes[..8] != KERNEL_MAGIC {
        return Err(bad("missing kernel container magic".into()));
    }
    fn take_u64(bytes: &[u8], pos: &mut usize) -> Option<u64> {
        let v = bytes.get(*pos..*pos + 8)?;
        *pos += 8;
        Some(u64::from_le_bytes(v.try_into().unwrap()))
    }
    let truncated = |need: usize| Error::TruncatedFile {
        path: path.display().to_string(),
        declared: need,
        found: bytes.len(),
    };
    let mut pos = 8;
    let rows = take_u64(&bytes, &mut pos).ok_or_else(|| truncated(pos + 8))? as usize;
    let cols = take_u64(&bytes, &mut pos).ok_or_else(|| truncated(pos + 8))? as usize;
    let mut labels = Vec::new();
    for _ in 0..2 {
        let len = take_u64(&bytes, &mut pos).ok_or_else(|| truncated(pos + 8))? as usize;
        if pos + len > bytes.len() {
            return Err(truncated(pos + len));
        }
        labels.push(String::from_utf8_lossy(&bytes[pos..pos + len]).into_owned());
        pos += len;
    }
    let payload = &bytes[pos..];
    if payload.len() != 8 * rows * cols {
        return Err(Error::TruncatedFile {
            path: path.display().to_string(),
            declared: pos + 8 * rows * cols,
            found: bytes.len(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Kernel {
        matrix: DenseMatrix::from_vec(rows, cols, data),
        lhs_id: labels[0].clone(),
        rhs_id: labels[1].clone(),
    })
}
