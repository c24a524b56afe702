//! Single-head attention block with learnable key/value prompt rows.
//!
//! Input tokens are the sample reshaped to L×E. Keys and values are
//! row-concatenated with p_K, p_V (L_p×E); queries are unchanged; softmax
//! runs over L + L_p slots (or L alone when prompt slots are masked out).
//! Residual attention feeds a tanh MLP (E -> 4E -> E, no biases) with a
//! second residual, then mean pooling and a linear head. No tensor in the
//! block carries a bias.

use super::Model;
use crate::numerics::dot;

pub(crate) struct Cache {
    /// Tokens, flat L×E.
    x: Vec<f64>,
    /// Queries, flat L×E.
    q: Vec<f64>,
    /// Keys over all slots, flat S×E.
    k: Vec<f64>,
    /// Values over all slots, flat S×E.
    v: Vec<f64>,
    /// Attention weights, flat L×S.
    w: Vec<f64>,
    /// Post-attention residual stream, flat L×E.
    h: Vec<f64>,
    /// MLP hidden tanh outputs, flat L×4E.
    m1: Vec<f64>,
    /// Mean-pooled features, E.
    pool: Vec<f64>,
    slots: usize,
}

fn apply_square(w: &[f64], x: &[f64], dim: usize) -> Vec<f64> {
    (0..dim).map(|i| dot(&w[i * x.len()..(i + 1) * x.len()], x)).collect()
}

pub(crate) fn forward(model: &Model, x: &[f64]) -> (Vec<f64>, Cache) {
    let spec = &model.spec;
    let e = spec.embed_dim;
    let l = spec.seq_len();
    let lp = spec.prompt_length;
    let slots = if spec.prompt_slots_masked { l } else { l + lp };
    let scale = 1.0 / (e as f64).sqrt();
    let params = &model.params;
    let w_q = params.slice("attn.w_q");
    let w_k = params.slice("attn.w_k");
    let w_v = params.slice("attn.w_v");
    let p_k = params.slice("attn.p_k");
    let p_v = params.slice("attn.p_v");
    let w1 = params.slice("mlp.w1");
    let w2 = params.slice("mlp.w2");

    let mut q = vec![0.0; l * e];
    let mut k = vec![0.0; slots * e];
    let mut v = vec![0.0; slots * e];
    for t in 0..l {
        let xt = &x[t * e..(t + 1) * e];
        q[t * e..(t + 1) * e].copy_from_slice(&apply_square(w_q, xt, e));
        k[t * e..(t + 1) * e].copy_from_slice(&apply_square(w_k, xt, e));
        v[t * e..(t + 1) * e].copy_from_slice(&apply_square(w_v, xt, e));
    }
    for p in 0..slots.saturating_sub(l) {
        k[(l + p) * e..(l + p + 1) * e].copy_from_slice(&p_k[p * e..(p + 1) * e]);
        v[(l + p) * e..(l + p + 1) * e].copy_from_slice(&p_v[p * e..(p + 1) * e]);
    }

    let mut w = vec![0.0; l * slots];
    let mut h = vec![0.0; l * e];
    for t in 0..l {
        let qt = &q[t * e..(t + 1) * e];
        let scores: Vec<f64> = (0..slots)
            .map(|j| scale * dot(qt, &k[j * e..(j + 1) * e]))
            .collect();
        let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..slots {
            w[t * slots + j] = exps[j] / z;
        }
        for j in 0..slots {
            let wj = w[t * slots + j];
            let vj = &v[j * e..(j + 1) * e];
            for i in 0..e {
                h[t * e + i] += wj * vj[i];
            }
        }
        for i in 0..e {
            h[t * e + i] += x[t * e + i];
        }
    }

    let mut m1 = vec![0.0; l * 4 * e];
    let mut pool = vec![0.0; e];
    for t in 0..l {
        let ht = &h[t * e..(t + 1) * e];
        let a1 = apply_square(w1, ht, 4 * e);
        for (i, &a) in a1.iter().enumerate() {
            m1[t * 4 * e + i] = a.tanh();
        }
        let m2 = apply_square(w2, &m1[t * 4 * e..(t + 1) * 4 * e], e);
        for i in 0..e {
            pool[i] += ht[i] + m2[i];
        }
    }
    for p in pool.iter_mut() {
        *p /= l as f64;
    }

    let head_w = params.slice("head.weight");
    let mut logits = vec![0.0; spec.num_classes];
    for c in 0..spec.num_classes {
        logits[c] = dot(&head_w[c * e..(c + 1) * e], &pool);
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
            q,
            k,
            v,
            w,
            h,
            m1,
            pool,
            slots,
        },
    )
}

pub(crate) fn backward(model: &Model, cache: &Cache, dlogits: &[f64], grad: &mut [f64]) {
    let spec = &model.spec;
    let e = spec.embed_dim;
    let l = spec.seq_len();
    let slots = cache.slots;
    let scale = 1.0 / (e as f64).sqrt();
    let params = &model.params;

    let hw_off = params.tensor("head.weight").unwrap().offset;
    for c in 0..spec.num_classes {
        let g = dlogits[c];
        for j in 0..e {
            grad[hw_off + c * e + j] += g * cache.pool[j];
        }
    }
    if spec.use_bias {
        let hb_off = params.tensor("head.bias").unwrap().offset;
        for c in 0..spec.num_classes {
            grad[hb_off + c] += dlogits[c];
        }
    }
    let head_w = params.slice("head.weight");
    let mut dpool = vec![0.0; e];
    for c in 0..spec.num_classes {
        let g = dlogits[c];
        for j in 0..e {
            dpool[j] += g * head_w[c * e + j];
        }
    }
    let dz: Vec<f64> = dpool.iter().map(|d| d / l as f64).collect();

    let w1 = params.slice("mlp.w1");
    let w2 = params.slice("mlp.w2");
    let w1_off = params.tensor("mlp.w1").unwrap().offset;
    let w2_off = params.tensor("mlp.w2").unwrap().offset;
    let wq_off = params.tensor("attn.w_q").unwrap().offset;
    let wk_off = params.tensor("attn.w_k").unwrap().offset;
    let wv_off = params.tensor("attn.w_v").unwrap().offset;
    let pk_off = params.tensor("attn.p_k").unwrap().offset;
    let pv_off = params.tensor("attn.p_v").unwrap().offset;

    let mut dk = vec![0.0; slots * e];
    let mut dv = vec![0.0; slots * e];
    for t in 0..l {
        let ht = &cache.h[t * e..(t + 1) * e];
        let m1t = &cache.m1[t * 4 * e..(t + 1) * 4 * e];

        let mut da1 = vec![0.0; 4 * e];
        for i in 0..e {
            let g = dz[i];
            for j in 0..4 * e {
                grad[w2_off + i * 4 * e + j] += g * m1t[j];
            }
        }
        for j in 0..4 * e {
            let mut dm1 = 0.0;
            for i in 0..e {
                dm1 += dz[i] * w2[i * 4 * e + j];
            }
            da1[j] = dm1 * (1.0 - m1t[j] * m1t[j]);
        }
        let mut dh = dz.clone();
        for i in 0..4 * e {
            let g = da1[i];
            for j in 0..e {
                grad[w1_off + i * e + j] += g * ht[j];
            }
        }
        for j in 0..e {
            let mut acc = 0.0;
            for i in 0..4 * e {
                acc += da1[i] * w1[i * e + j];
            }
            dh[j] += acc;
        }

        let wt = &cache.w[t * slots..(t + 1) * slots];
        let mut dw = vec![0.0; slots];
        for j in 0..slots {
            dw[j] = dot(&dh, &cache.v[j * e..(j + 1) * e]);
            let wj = wt[j];
            for i in 0..e {
                dv[j * e + i] += wj * dh[i];
            }
        }
        let wdw = dot(wt, &dw);
        let qt = &cache.q[t * e..(t + 1) * e];
        let mut dq = vec![0.0; e];
        for j in 0..slots {
            let ds = wt[j] * (dw[j] - wdw) * scale;
            let kj = &cache.k[j * e..(j + 1) * e];
            for i in 0..e {
                dq[i] += ds * kj[i];
                dk[j * e + i] += ds * qt[i];
            }
        }
        let xt = &cache.x[t * e..(t + 1) * e];
        for i in 0..e {
            let g = dq[i];
            for j in 0..e {
                grad[wq_off + i * e + j] += g * xt[j];
            }
        }
    }

    for t in 0..l {
        let xt = &cache.x[t * e..(t + 1) * e];
        for i in 0..e {
            let gk = dk[t * e + i];
            let gv = dv[t * e + i];
            for j in 0..e {
                grad[wk_off + i * e + j] += gk * xt[j];
                grad[wv_off + i * e + j] += gv * xt[j];
            }
        }
    }
    for p in 0..slots.saturating_sub(l) {
        for i in 0..e {
            grad[pk_off + p * e + i] += dk[(l + p) * e + i];
            grad[pv_off + p * e + i] += dv[(l + p) * e + i];
        }
    }
}
