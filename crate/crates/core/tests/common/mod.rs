//! Independent reference implementations on plain nested vectors.
#![allow(dead_code)]

use cmavit::dataset::{Dataset, GenConfig};
use cmavit::graph::{Graph, Var};
use cmavit::model::{forward, ModalityMask, ModelConfig, ModelInput};
use cmavit::train::mse_loss;
use cmavit::{ParamStore, Rng, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn vec_of(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn random_mat(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.normal() * scale).collect()).collect()
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal() * scale)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

pub fn linear(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    add_bias(&matmul(x, w), b)
}

pub fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn hcat(parts: &[Mat]) -> Mat {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Row softmax where masked columns get −∞ logits; an all-masked row is 0.
pub fn masked_softmax(row: &[f64], mask: &[bool]) -> Vec<f64> {
    if mask.iter().all(|&m| m) {
        return vec![0.0; row.len()];
    }
    let logits: Vec<f64> = row
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { f64::NEG_INFINITY } else { x })
        .collect();
    softmax(&logits)
}

pub fn layer_norm(x: &Mat, g: &[f64], b: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            r.iter().enumerate().map(|(j, v)| (v - mu) * inv * g[j] + b[j]).collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// `softmax(q·kᵀ·scale + bias)·v` with optional key mask, written out
/// element by element.
pub fn dense_attention(q: &Mat, k: &Mat, v: &Mat, bias: Option<&Mat>, mask: Option<&[bool]>, scale: f64) -> Mat {
    let (l, lk, dv) = (q.len(), k.len(), v[0].len());
    let no_mask = vec![false; lk];
    let mask = mask.unwrap_or(&no_mask);
    let mut out = vec![vec![0.0; dv]; l];
    for i in 0..l {
        let logits: Vec<f64> = (0..lk)
            .map(|j| {
                let dot: f64 = q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum();
                dot * scale + bias.map_or(0.0, |b| b[i][j])
            })
            .collect();
        let w = masked_softmax(&logits, mask);
        for j in 0..lk {
            for c in 0..dv {
                out[i][c] += w[j] * v[j][c];
            }
        }
    }
    out
}

/// The met bias of one head at token resolution: B[t(i), t(j)] with zero
/// on the CLS row and column (token 0 when `cls`).
pub fn expanded_bias(qm: &Mat, km: &Mat, np: usize, cls: bool, scale: f64) -> Mat {
    let t = qm.len();
    let off = usize::from(cls);
    let l = t * np + off;
    let mut b = vec![vec![0.0; l]; l];
    for i in off..l {
        for j in off..l {
            let (ti, tj) = ((i - off) / np, (j - off) / np);
            let dot: f64 = qm[ti].iter().zip(&km[tj]).map(|(a, b)| a * b).sum();
            b[i][j] = dot * scale;
        }
    }
    b
}

pub fn param(p: &ParamStore, name: &str) -> Mat {
    let t = p.get(name).unwrap_or_else(|| panic!("missing {name}"));
    if t.shape().len() == 1 {
        vec![t.data().to_vec()]
    } else {
        to_mat(t)
    }
}

pub fn param_vec(p: &ParamStore, name: &str) -> Vec<f64> {
    p.get(name).unwrap().data().to_vec()
}

/// Multi-head self-attention of a block under `prefix`, with an optional
/// per-head met bias built from `met` tokens.
pub fn mha(p: &ParamStore, prefix: &str, x: &Mat, heads: usize, met: Option<(&Mat, usize)>, mask: Option<&[bool]>) -> Mat {
    let lin = |w: &str, b: &str| linear(x, &param(p, &format!("{prefix}.{w}")), &param_vec(p, &format!("{prefix}.{b}")));
    let (q, k, v) = (lin("wq", "bq"), lin("wk", "bk"), lin("wv", "bv"));
    let d = q[0].len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::new();
    for h in 0..heads {
        let (qh, kh, vh) = (cols(&q, h * dh, dh), cols(&k, h * dh, dh), cols(&v, h * dh, dh));
        let bias = met.map(|(m, np)| {
            let qm = cols(&matmul(m, &param(p, &format!("{prefix}.met_wq"))), h * dh, dh);
            let km = cols(&matmul(m, &param(p, &format!("{prefix}.met_wk"))), h * dh, dh);
            expanded_bias(&qm, &km, np, true, scale)
        });
        outs.push(dense_attention(&qh, &kh, &vh, bias.as_ref(), mask, scale));
    }
    linear(&hcat(&outs), &param(p, &format!("{prefix}.wo")), &param_vec(p, &format!("{prefix}.bo")))
}

/// Pre-norm transformer block without dropout.
pub fn block(p: &ParamStore, prefix: &str, x: &Mat, heads: usize, met: Option<(&Mat, usize)>, mask: Option<&[bool]>) -> Mat {
    let ln = |x: &Mat, n: &str| layer_norm(x, &param_vec(p, &format!("{prefix}.{n}.g")), &param_vec(p, &format!("{prefix}.{n}.b")), 1e-5);
    let a = mha(p, &format!("{prefix}.attn"), &ln(x, "ln1"), heads, met, mask);
    let x = add(x, &a);
    let h = linear(&ln(&x, "ln2"), &param(p, &format!("{prefix}.mlp.w1")), &param_vec(p, &format!("{prefix}.mlp.b1")));
    let h: Mat = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    let m = linear(&h, &param(p, &format!("{prefix}.mlp.w2")), &param_vec(p, &format!("{prefix}.mlp.b2")));
    add(&x, &m)
}

/// Vanilla ViT encoder over the `enc.*` weights (no met bias).
pub fn vit_encoder(p: &ParamStore, x: &Mat, cfg: &ModelConfig) -> Mat {
    let mut x = x.clone();
    for l in 0..cfg.n_layers {
        x = block(p, &format!("enc.{l}"), &x, cfg.n_heads, None, None);
    }
    layer_norm(&x, &param_vec(p, "enc.ln.g"), &param_vec(p, "enc.ln.b"), 1e-5)
}

/// `x + softmax(x·Wq·(c·Wk)ᵀ/√d)·(c·Wv)` with padded keys excluded.
pub fn dense_cross_attention(x: &Mat, c: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, mask: &[bool]) -> Mat {
    let d = x[0].len();
    let q = matmul(x, wq);
    let k = matmul(c, wk);
    let v = matmul(c, wv);
    add(x, &dense_attention(&q, &k, &v, None, Some(mask), 1.0 / (d as f64).sqrt()))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂), or 0 when both are exactly zero.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    rel_err_floor(analytic, numeric, 0.0)
}

/// Like [`rel_err`] but with the denominator at least `floor`, so that
/// gradients that are identically zero are judged by absolute error.
pub fn rel_err_floor(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric)).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub const GRAD_FLOOR: f64 = 1e-4;

/// Checks ∂f/∂inputs of a scalar-valued graph function against central
/// differences; returns the worst per-input relative error.
pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let h = 1e-5;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.backward(out).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).unwrap().data().to_vec();
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut ins = inputs.to_vec();
            ins[k].data_mut()[i] = t.data()[i] + h;
            let plus = eval(&ins);
            ins[k].data_mut()[i] = t.data()[i] - h;
            let minus = eval(&ins);
            numeric[i] = (plus - minus) / (2.0 * h);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Per-parameter relative error of end-to-end model gradients of the MSE
/// loss against central differences.
pub fn model_gradcheck(
    params: &ParamStore,
    cfg: &ModelConfig,
    input: &ModelInput,
    target: &Tensor,
    mask: ModalityMask,
) -> Vec<(String, f64)> {
    let h = 1e-5;
    let loss_of = |p: &ParamStore, g: &mut Graph| -> Var {
        let pred = forward(g, p, cfg, input, mask, &mut Rng::new(0), false).unwrap();
        mse_loss(g, pred, target).unwrap()
    };
    let mut g = Graph::new();
    let l = loss_of(params, &mut g);
    g.backward(l).unwrap();
    let analytic: Vec<Option<Tensor>> = {
        let mut a = vec![None; params.len()];
        for (i, v) in g.param_vars() {
            a[i] = g.grad(v);
        }
        a
    };
    let mut out = Vec::new();
    let mut p = params.clone();
    for i in 0..params.len() {
        let n = params.tensor(i).len();
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let orig = params.tensor(i).data()[j];
            let mut eval = |x: f64| {
                p.tensors_mut()[i].data_mut()[j] = x;
                let mut g = Graph::inference();
                let l = loss_of(&p, &mut g);
                g.value(l).item()
            };
            let plus = eval(orig + h);
            let minus = eval(orig - h);
            numeric[j] = (plus - minus) / (2.0 * h);
            p.tensors_mut()[i].data_mut()[j] = orig;
        }
        let a = analytic[i].as_ref().map_or(vec![0.0; n], |t| t.data().to_vec());
        out.push((params.name(i).to_string(), rel_err_floor(&a, &numeric, GRAD_FLOOR)));
    }
    out
}

/// Small dataset with short series for fast model-level tests.
pub fn tiny_dataset(seed: u64, timesteps: usize) -> Dataset {
    let cfg = GenConfig {
        n_cultivars: 2,
        blocks_per_cultivar: 3,
        years: vec![2017],
        timesteps,
        field_px: 32,
        ..GenConfig::default()
    };
    Dataset::synthesize(seed, cfg).unwrap()
}

/// Replaces every parameter with N(0, scale²) values so that no term is
/// negligible in oracle comparisons.
pub fn randomized(params: &ParamStore, seed: u64, scale: f64) -> ParamStore {
    let mut p = params.clone();
    let mut rng = Rng::new(seed);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.normal() * scale;
        }
    }
    p
}
