//! Mini CNN: one grouped valid-padding convolution (no bias), batch
//! normalization with frozen statistics, tanh, flatten, linear head.

use super::{Model, NORM_EPS};
use crate::numerics::{dot, DenseMatrix};

pub(crate) struct Cache {
    x: Vec<f64>,
    /// Normalized pre-affine activations, flat [C_o, side_out, side_out].
    z: Vec<f64>,
    /// tanh outputs, same layout.
    t: Vec<f64>,
}

struct Geometry {
    side: usize,
    side_out: usize,
    k: usize,
    c_out: usize,
    group_in: usize,
    group_out: usize,
}

fn geometry(model: &Model) -> Geometry {
    let spec = &model.spec;
    let side = spec.image_side().expect("validated spec");
    Geometry {
        side,
        side_out: side - spec.kernel_size + 1,
        k: spec.kernel_size,
        c_out: spec.out_channels,
        group_in: spec.in_channels / spec.groups,
        group_out: spec.out_channels / spec.groups,
    }
}

fn conv_out(g: &Geometry, w: &[f64], x: &[f64]) -> Vec<f64> {
    let area = g.side * g.side;
    let area_out = g.side_out * g.side_out;
    let mut u = vec![0.0; g.c_out * area_out];
    for o in 0..g.c_out {
        let gbase = (o / g.group_out) * g.group_in;
        for oy in 0..g.side_out {
            for ox in 0..g.side_out {
                let mut acc = 0.0;
                for ci in 0..g.group_in {
                    let xin = &x[(gbase + ci) * area..(gbase + ci + 1) * area];
                    let wk = &w[((o * g.group_in + ci) * g.k) * g.k..((o * g.group_in + ci) * g.k + g.k) * g.k];
                    for ky in 0..g.k {
                        let xrow = &xin[(oy + ky) * g.side + ox..(oy + ky) * g.side + ox + g.k];
                        let wrow = &wk[ky * g.k..(ky + 1) * g.k];
                        for kx in 0..g.k {
                            acc += wrow[kx] * xrow[kx];
                        }
                    }
                }
                u[o * area_out + oy * g.side_out + ox] = acc;
            }
        }
    }
    u
}

pub(crate) fn forward(model: &Model, x: &[f64]) -> (Vec<f64>, Cache) {
    let spec = &model.spec;
    let g = geometry(model);
    let area_out = g.side_out * g.side_out;
    let params = &model.params;

    let u = conv_out(&g, params.slice("conv.weight"), x);
    let stats = model.stats_for("bn");
    let gamma = params.slice("bn.gamma");
    let beta = params.slice("bn.beta");
    let mut z = vec![0.0; u.len()];
    let mut t = vec![0.0; u.len()];
    for o in 0..g.c_out {
        let istd = 1.0 / (stats.var[o] + NORM_EPS).sqrt();
        for p in 0..area_out {
            let idx = o * area_out + p;
            z[idx] = (u[idx] - stats.mean[o]) * istd;
            t[idx] = (gamma[o] * z[idx] + beta[o]).tanh();
        }
    }

    let head_w = params.slice("head.weight");
    let flat_dim = t.len();
    let mut logits = vec![0.0; spec.num_classes];
    for c in 0..spec.num_classes {
        logits[c] = dot(&head_w[c * flat_dim..(c + 1) * flat_dim], &t);
    }
    if spec.use_bias {
        let head_b = params.slice("head.bias");
        for c in 0..spec.num_classes {
            logits[c] += head_b[c];
        }
    }
    (
        logits,
        Cache {
            x: x.to_vec(),
            z,
            t,
        },
    )
}

pub(crate) fn backward(model: &Model, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
    let spec = &model.spec;
    let g = geometry(model);
    let area = g.side * g.side;
    let area_out = g.side_out * g.side_out;
    let params = &model.params;
    let flat_dim = cache.t.len();

    let hw_off = params.tensor("head.weight").unwrap().offset;
    for c in 0..spec.num_classes {
        let gl = dlogits[c];
        for j in 0..flat_dim {
            grad[hw_off + c * flat_dim + j] += gl * cache.t[j];
        }
    }
    if spec.use_bias {
        let hb_off = params.tensor("head.bias").unwrap().offset;
        for c in 0..spec.num_classes {
            grad[hb_off + c] += dlogits[c];
        }
    }
    let head_w = params.slice("head.weight");
    let mut dt = vec![0.0; flat_dim];
    for c in 0..spec.num_classes {
        let gl = dlogits[c];
        for j in 0..flat_dim {
            dt[j] += gl * head_w[c * flat_dim + j];
        }
    }

    let stats = model.stats_for("bn");
    let gamma = params.slice("bn.gamma");
    let gamma_off = params.tensor("bn.gamma").unwrap().offset;
    let beta_off = params.tensor("bn.beta").unwrap().offset;
    let mut du = vec![0.0; flat_dim];
    for o in 0..g.c_out {
        let istd = 1.0 / (stats.var[o] + NORM_EPS).sqrt();
        for p in 0..area_out {
            let idx = o * area_out + p;
            let da = dt[idx] * (1.0 - cache.t[idx] * cache.t[idx]);
            grad[gamma_off + o] += da * cache.z[idx];
            grad[beta_off + o] += da;
            du[idx] = da * gamma[o] * istd;
        }
    }

    let w_off = params.tensor("conv.weight").unwrap().offset;
    for o in 0..g.c_out {
        let gbase = (o / g.group_out) * g.group_in;
        for ci in 0..g.group_in {
            let xin = &cache.x[(gbase + ci) * area..(gbase + ci + 1) * area];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let mut acc = 0.0;
                    for oy in 0..g.side_out {
                        for ox in 0..g.side_out {
                            acc += du[o * area_out + oy * g.side_out + ox]
                                * xin[(oy + ky) * g.side + ox + kx];
                        }
                    }
                    grad[w_off + ((o * g.group_in + ci) * g.k + ky) * g.k + kx] += acc;
                }
            }
        }
    }
}

/// Freezes BN statistics to the per-channel mean and population variance of
/// the convolution outputs over `inputs` and all spatial positions.
pub(crate) fn calibrate(model: &mut Model, inputs: &DenseMatrix) {
    let g = geometry(model);
    let area_out = g.side_out * g.side_out;
    let n = inputs.rows();
    let w = model.params.slice("conv.weight").to_vec();

    let mut mean = vec![0.0; g.c_out];
    let mut var = vec![0.0; g.c_out];
    let mut us = Vec::with_capacity(n);
    for i in 0..n {
        let u = conv_out(&g, &w, inputs.row(i));
        for o in 0..g.c_out {
            for p in 0..area_out {
                mean[o] += u[o * area_out + p];
            }
        }
        us.push(u);
    }
    let count = (n * area_out) as f64;
    for m in mean.iter_mut() {
        *m /= count;
    }
    for u in &us {
        for o in 0..g.c_out {
            for p in 0..area_out {
                let d = u[o * area_out + p] - mean[o];
                var[o] += d * d;
            }
        }
    }
    for v in var.iter_mut() {
        *v /= count;
    }

    let stats = model
        .stats
        .iter_mut()
        .find(|s| s.name == "bn")
        .expect("bn stats present");
    stats.mean = mean;
    stats.var = var;
}
