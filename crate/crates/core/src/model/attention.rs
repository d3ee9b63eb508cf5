//! Scaled dot-product attention with an additive meteorological bias,
//! multi-head wrappers and the image/context cross-attention.

use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// Position of each token in a (CLS +) T × N_p sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub timesteps: usize,
    pub patches_per_step: usize,
    pub cls: bool,
}

impl TokenLayout {
    pub fn len(&self) -> usize {
        self.timesteps * self.patches_per_step + usize::from(self.cls)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Timestep of token `i`; `None` for the CLS token.
    pub fn timestep(&self, i: usize) -> Option<usize> {
        match (self.cls, i) {
            (true, 0) => None,
            (true, i) => Some((i - 1) / self.patches_per_step),
            (false, i) => Some(i / self.patches_per_step),
        }
    }

    /// Flat gather indices expanding a T×T bias to token resolution:
    /// entry (i, j) reads B[t(i), t(j)], and is zero on the CLS row/column.
    pub fn bias_index(&self) -> Vec<Option<usize>> {
        let l = self.len();
        let t = self.timesteps;
        let mut idx = Vec::with_capacity(l * l);
        for i in 0..l {
            for j in 0..l {
                idx.push(match (self.timestep(i), self.timestep(j)) {
                    (Some(a), Some(b)) => Some(a * t + b),
                    _ => None,
                });
            }
        }
        idx
    }
}

/// Meteorological queries/keys for one head: T×d_head each.
#[derive(Clone, Copy, Debug)]
pub struct MetBias {
    pub q: Var,
    pub k: Var,
}

/// `softmax(Qs·Ksᵀ/√d_h + expand(Qm·Kmᵀ/√d_h))·Vs` for one head.
///
/// Without `met` this is plain scaled dot-product attention. Keys with
/// `key_mask[j] == true` get zero weight.
pub fn stmm_attention(
    g: &mut Graph,
    qs: Var,
    ks: Var,
    vs: Var,
    met: Option<MetBias>,
    layout: TokenLayout,
    key_mask: Option<&[bool]>,
) -> Result<Var> {
    let (l, dh) = g.value(qs).dims2()?;
    if l != layout.len() || g.value(ks).dims2()?.0 != l {
        return Err(dim_err!("attention over {l} tokens but layout has {}", layout.len()));
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let kt = g.transpose(ks)?;
    let raw = g.matmul(qs, kt)?;
    let mut logits = g.scale(raw, scale)?;
    if let Some(m) = met {
        let (t, _) = g.value(m.q).dims2()?;
        if t != layout.timesteps || g.value(m.k).dims2()?.0 != t {
            return Err(dim_err!(
                "climate has {t} timesteps, image has {}",
                layout.timesteps
            ));
        }
        let kmt = g.transpose(m.k)?;
        let b = g.matmul(m.q, kmt)?;
        let b = g.scale(b, scale)?;
        let expanded = g.gather(b, layout.bias_index(), &[l, l])?;
        logits = g.add(logits, expanded)?;
    }
    let attn = match key_mask {
        Some(mask) => g.masked_softmax_rows(logits, mask)?,
        None => g.softmax_rows(logits)?,
    };
    g.matmul(attn, vs)
}

/// Multi-head self-attention over `x` (already normalized) using the
/// parameters under `prefix`: `wq,bq,wk,bk,wv,bv,wo,bo`, plus `met_wq`,
/// `met_wk` when `met_tokens` is given.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    p: &ParamStore,
    prefix: &str,
    x: Var,
    n_heads: usize,
    met_tokens: Option<Var>,
    layout: TokenLayout,
    key_mask: Option<&[bool]>,
) -> Result<Var> {
    let param = |g: &mut Graph, n: &str| g.param(p, &format!("{prefix}.{n}"));
    let (wq, bq) = (param(g, "wq")?, param(g, "bq")?);
    let (wk, bk) = (param(g, "wk")?, param(g, "bk")?);
    let (wv, bv) = (param(g, "wv")?, param(g, "bv")?);
    let (wo, bo) = (param(g, "wo")?, param(g, "bo")?);
    let q = g.linear(x, wq, bq)?;
    let k = g.linear(x, wk, bk)?;
    let v = g.linear(x, wv, bv)?;
    let met = match met_tokens {
        Some(m) => {
            let mq = param(g, "met_wq")?;
            let mk = param(g, "met_wk")?;
            Some((g.matmul(m, mq)?, g.matmul(m, mk)?))
        }
        None => None,
    };
    let d = g.value(q).dims2()?.1;
    let dh = d / n_heads;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let mb = match met {
            Some((mq, mk)) => Some(MetBias {
                q: g.slice_cols(mq, h * dh, dh)?,
                k: g.slice_cols(mk, h * dh, dh)?,
            }),
            None => None,
        };
        heads.push(stmm_attention(g, qh, kh, vh, mb, layout, key_mask)?);
    }
    let merged = if n_heads == 1 { heads[0] } else { g.concat_cols(&heads)? };
    g.linear(merged, wo, bo)
}

/// Single-head cross-attention of image tokens onto context tokens with a
/// residual connection: `x + softmax(x·Wq·(c·Wk)ᵀ/√d)·(c·Wv)`.
/// Padded context keys are excluded; a fully padded context contributes
/// nothing.
pub fn cross_attention(
    g: &mut Graph,
    p: &ParamStore,
    x: Var,
    context: Var,
    pad_mask: &[bool],
) -> Result<Var> {
    let (_, d) = g.value(x).dims2()?;
    let (lc, dc) = g.value(context).dims2()?;
    if dc != d || pad_mask.len() != lc {
        return Err(dim_err!("context {lc}×{dc} (mask {}) vs image width {d}", pad_mask.len()));
    }
    let wq = g.param(p, "xattn.wq")?;
    let wk = g.param(p, "xattn.wk")?;
    let wv = g.param(p, "xattn.wv")?;
    let q = g.matmul(x, wq)?;
    let k = g.matmul(context, wk)?;
    let v = g.matmul(context, wv)?;
    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    let logits = g.scale(raw, 1.0 / (d as f64).sqrt())?;
    let attn = g.masked_softmax_rows(logits, pad_mask)?;
    let cross = g.matmul(attn, v)?;
    g.add(x, cross)
}
