//! MLP with per-layer affine normalization: Linear -> normalize (frozen
//! stats) -> scale/shift -> tanh per hidden layer, linear head on logits.

use super::{Model, NORM_EPS};
use crate::numerics::{dot, DenseMatrix};

pub(crate) struct Cache {
    x: Vec<f64>,
    /// Input to each hidden layer (entry 0 is the sample itself).
    layer_in: Vec<Vec<f64>>,
    /// Normalized pre-affine activations per hidden layer.
    z: Vec<Vec<f64>>,
    /// tanh outputs per hidden layer.
    t: Vec<Vec<f64>>,
}

fn inv_std(var: &[f64]) -> Vec<f64> {
    var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect()
}

fn linear(w: &[f64], b: Option<&[f64]>, x: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    let mut u = vec![0.0; out_dim];
    for r in 0..out_dim {
        u[r] = dot(&w[r * in_dim..(r + 1) * in_dim], x);
    }
    if let Some(b) = b {
        for r in 0..out_dim {
            u[r] += b[r];
        }
    }
    u
}

/// Tensor index stride per hidden layer in the fixed layout
/// (weight, optional bias, gamma, beta).
fn tensors_per_layer(use_bias: bool) -> usize {
    if use_bias {
        4
    } else {
        3
    }
}

pub(crate) fn forward(model: &Model, x: &[f64]) -> (Vec<f64>, Cache) {
    let spec = &model.spec;
    let layout = model.params.layout();
    let values = model.params.values();
    let tpl = tensors_per_layer(spec.use_bias);
    let mut cache = Cache {
        x: x.to_vec(),
        layer_in: Vec::with_capacity(spec.layer_sizes.len()),
        z: Vec::with_capacity(spec.layer_sizes.len()),
        t: Vec::with_capacity(spec.layer_sizes.len()),
    };
    let mut h = x.to_vec();
    for (i, &width) in spec.layer_sizes.iter().enumerate() {
        let base = i * tpl;
        debug_assert_eq!(layout[base].name, format!("layers.{i}.weight"));
        let w = &values[layout[base].range()];
        let b = spec.use_bias.then(|| &values[layout[base + 1].range()]);
        let gamma = &values[layout[base + tpl - 2].range()];
        let beta = &values[layout[base + tpl - 1].range()];
        let stats = &model.stats[i];
        let istd = &model.istd[i];
        let u = linear(w, b, &h, width);
        let mut z = Vec::with_capacity(width);
        let mut t = Vec::with_capacity(width);
        for j in 0..width {
            let zj = (u[j] - stats.mean[j]) * istd[j];
            z.push(zj);
            t.push((gamma[j] * zj + beta[j]).tanh());
        }
        cache.layer_in.push(std::mem::replace(&mut h, t.clone()));
        cache.z.push(z);
        cache.t.push(t);
    }
    let head_base = spec.layer_sizes.len() * tpl;
    debug_assert_eq!(layout[head_base].name, "head.weight");
    let head_w = &values[layout[head_base].range()];
    let head_b = spec.use_bias.then(|| &values[layout[head_base + 1].range()]);
    let logits = linear(head_w, head_b, &h, spec.num_classes);
    (logits, cache)
}

pub(crate) fn backward(model: &Model, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
    let spec = &model.spec;
    let layout = model.params.layout();
    let values = model.params.values();
    let tpl = tensors_per_layer(spec.use_bias);
    let nl = spec.layer_sizes.len();
    let head_in: &[f64] = cache.t.last().unwrap_or(&cache.x);
    let hin_dim = head_in.len();

    let head_base = nl * tpl;
    debug_assert_eq!(layout[head_base].name, "head.weight");
    let hw_off = layout[head_base].offset;
    for c in 0..spec.num_classes {
        let g = dlogits[c];
        let row = &mut grad[hw_off + c * hin_dim..hw_off + (c + 1) * hin_dim];
        for j in 0..hin_dim {
            row[j] += g * head_in[j];
        }
    }
    if spec.use_bias {
        let hb = layout[head_base + 1].offset;
        for c in 0..spec.num_classes {
            grad[hb + c] += dlogits[c];
        }
    }
    let head_w = &values[layout[head_base].range()];
    let mut dh = vec![0.0; hin_dim];
    for c in 0..spec.num_classes {
        let g = dlogits[c];
        let row = &head_w[c * hin_dim..(c + 1) * hin_dim];
        for j in 0..hin_dim {
            dh[j] += g * row[j];
        }
    }

    for i in (0..nl).rev() {
        let width = spec.layer_sizes[i];
        let t = &cache.t[i];
        let z = &cache.z[i];
        let layer_in = &cache.layer_in[i];
        let in_dim = layer_in.len();
        let istd = &model.istd[i];
        let base = i * tpl;
        debug_assert_eq!(layout[base].name, format!("layers.{i}.weight"));
        let gamma = &values[layout[base + tpl - 2].range()];
        let gamma_off = layout[base + tpl - 2].offset;
        let beta_off = layout[base + tpl - 1].offset;
        let w_off = layout[base].offset;

        let mut du = vec![0.0; width];
        for j in 0..width {
            let da = dh[j] * (1.0 - t[j] * t[j]);
            grad[gamma_off + j] += da * z[j];
            grad[beta_off + j] += da;
            du[j] = da * gamma[j] * istd[j];
        }
        for j in 0..width {
            let row = &mut grad[w_off + j * in_dim..w_off + (j + 1) * in_dim];
            let duj = du[j];
            for k in 0..in_dim {
                row[k] += duj * layer_in[k];
            }
        }
        if spec.use_bias {
            let b_off = layout[base + 1].offset;
            for j in 0..width {
                grad[b_off + j] += du[j];
            }
        }
        let w = &values[layout[base].range()];
        let mut dh_prev = vec![0.0; in_dim];
        for j in 0..width {
            let row = &w[j * in_dim..(j + 1) * in_dim];
            let duj = du[j];
            for k in 0..in_dim {
                dh_prev[k] += duj * row[k];
            }
        }
        dh = dh_prev;
    }
}

/// Freezes each layer's statistics to the mean and population variance of
/// its pre-normalization activations over `inputs`, in layer order.
pub(crate) fn calibrate(model: &mut Model, inputs: &DenseMatrix) {
    let spec = model.spec.clone();
    let n = inputs.rows();
    let mut hs: Vec<Vec<f64>> = (0..n).map(|i| inputs.row(i).to_vec()).collect();
    for (i, &width) in spec.layer_sizes.iter().enumerate() {
        let params = &model.params;
        let w = params.slice(&format!("layers.{i}.weight")).to_vec();
        let b = spec
            .use_bias
            .then(|| params.slice(&format!("layers.{i}.bias")).to_vec());
        let gamma = params.slice(&format!("layers.{i}.gamma")).to_vec();
        let beta = params.slice(&format!("layers.{i}.beta")).to_vec();

        let us: Vec<Vec<f64>> = hs
            .iter()
            .map(|h| linear(&w, b.as_deref(), h, width))
            .collect();
        let mut mean = vec![0.0; width];
        for u in &us {
            for j in 0..width {
                mean[j] += u[j];
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; width];
        for u in &us {
            for j in 0..width {
                let d = u[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= n as f64;
        }

        let stats = model
            .stats
            .iter_mut()
            .find(|s| s.name == format!("layers.{i}"))
            .expect("mlp layer stats present");
        stats.mean = mean.clone();
        stats.var = var.clone();

        let istd = inv_std(&var);
        hs = us
            .into_iter()
            .map(|u| {
                (0..width)
                    .map(|j| (gamma[j] * (u[j] - mean[j]) * istd[j] + beta[j]).tanh())
                    .collect()
            })
            .collect();
    }
}
