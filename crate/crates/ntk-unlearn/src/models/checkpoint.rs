//! Model checkpoints: a textual header (spec, layout table, stats table)
//! followed by flat 64-bit little-endian values, parameters first, then each
//! normalization layer's mean and variance.

use std::io::Write;
use std::path::Path;

use super::{default_stats, Model, ModelSpec, ParamVector};
use crate::error::{Error, Result};

const MAGIC_LINE: &str = "ntk-unlearn-checkpoint v1";

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC_LINE);
    header.push('\n');
    header.push_str("spec-toml-begin\n");
    header.push_str(&toml::to_string(&model.spec).map_err(|e| Error::BadCheckpoint {
        path: path.display().to_string(),
        reason: format!("spec serialization failed: {e}"),
    })?);
    header.push_str("spec-toml-end\n");
    header.push_str(&format!("tensors {}\n", model.params.layout().len()));
    for t in model.params.layout() {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{} {} {}\n", t.name, t.offset, dims.join(" ")));
    }
    header.push_str(&format!("stats {}\n", model.stats.len()));
    for s in &model.stats {
        header.push_str(&format!("{} {}\n", s.name, s.mean.len()));
    }
    let total = model.params.len() + model.stats.iter().map(|s| 2 * s.mean.len()).sum::<usize>();
    header.push_str(&format!("payload {total}\n"));

    let mut bytes = Vec::with_capacity(header.len() + 8 * total);
    bytes.extend_from_slice(header.as_bytes());
    for v in model.params.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for s in &model.stats {
        for v in &s.mean {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in &s.var {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    let bad = |reason: String| Error::BadCheckpoint {
        path: path.display().to_string(),
        reason,
    };

    let mut pos = 0;
    let mut next_line = |bytes: &[u8]| -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::BadCheckpoint {
                path: path.display().to_string(),
                reason: "header ended before payload marker".into(),
            });
        }
        let line = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        pos += 1;
        Ok(line)
    };

    if next_line(&bytes)? != MAGIC_LINE {
        return Err(bad("missing checkpoint magic line".into()));
    }
    if next_line(&bytes)? != "spec-toml-begin" {
        return Err(bad("missing spec block".into()));
    }
    let mut spec_text = String::new();
    loop {
        let line = next_line(&bytes)?;
        if line == "spec-toml-end" {
            break;
        }
        spec_text.push_str(&line);
        spec_text.push('\n');
    }
    let spec: ModelSpec =
        toml::from_str(&spec_text).map_err(|e| bad(format!("spec parse failed: {e}")))?;
    let layout = spec.layout()?;

    let tensors_line = next_line(&bytes)?;
    let tensor_count: usize = tensors_line
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad tensors line: {tensors_line}")))?;
    if tensor_count != layout.len() {
        return Err(bad(format!(
            "tensor table lists {tensor_count} entries, spec layout has {}",
            layout.len()
        )));
    }
    for t in &layout {
        let line = next_line(&bytes)?;
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or("");
        let offset: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
        let dims: Vec<usize> = parts.filter_map(|s| s.parse().ok()).collect();
        if name != t.name || offset != t.offset || dims != t.shape {
            return Err(bad(format!(
                "tensor table mismatch: header {line:?} vs layout {} @{} {:?}",
                t.name, t.offset, t.shape
            )));
        }
    }

    let mut stats = default_stats(&spec)?;
    let stats_line = next_line(&bytes)?;
    let stats_count: usize = stats_line
        .strip_prefix("stats ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad stats line: {stats_line}")))?;
    if stats_count != stats.len() {
        return Err(bad(format!(
            "stats table lists {stats_count} layers, spec has {}",
            stats.len()
        )));
    }
    for s in &stats {
        let line = next_line(&bytes)?;
        let want = format!("{} {}", s.name, s.mean.len());
        if line != want {
            return Err(bad(format!("stats table mismatch: {line:?} vs {want:?}")));
        }
    }

    let payload_line = next_line(&bytes)?;
    let declared: usize = payload_line
        .strip_prefix("payload ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad payload line: {payload_line}")))?;
    let d: usize = layout.iter().map(super::TensorMeta::len).sum();
    let expected = d + stats.iter().map(|s| 2 * s.mean.len()).sum::<usize>();
    if declared != expected {
        return Err(bad(format!(
            "payload declares {declared} values, spec implies {expected}"
        )));
    }
    let payload = &bytes[pos..];
    if payload.len() != 8 * declared {
        return Err(Error::TruncatedFile {
            path: path.display().to_string(),
            declared: 8 * declared,
            found: payload.len(),
        });
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));

    let mut params = ParamVector::zeros(layout);
    for v in params.values_mut() {
        *v = values.next().unwrap();
    }
    for s in stats.iter_mut() {
        for v in s.mean.iter_mut() {
            *v = values.next().unwrap();
        }
        for v in s.var.iter_mut() {
            *v = values.next().unwrap();
        }
    }

    Ok(Model::assemble(spec, params, stats))
}
