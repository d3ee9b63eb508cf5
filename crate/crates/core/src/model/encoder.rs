use super::attention::{multi_head_attention, TokenLayout};
use super::config::ModelConfig;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::Rng;

pub const LN_EPS: f64 = 1e-5;

pub(crate) fn layer_norm(g: &mut Graph, p: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(p, &format!("{prefix}.g"))?;
    let beta = g.param(p, &format!("{prefix}.b"))?;
    g.layer_norm(x, gamma, beta, LN_EPS)
}

/// Pre-norm transformer block:
/// `x + drop(MHA(LN(x)))`, then `x + drop(MLP(LN(x)))` with a GELU MLP.
#[allow(clippy::too_many_arguments)]
pub fn encoder_block(
    g: &mut Graph,
    p: &ParamStore,
    prefix: &str,
    x: Var,
    cfg: &ModelConfig,
    met_tokens: Option<Var>,
    layout: TokenLayout,
    key_mask: Option<&[bool]>,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    let h = layer_norm(g, p, &format!("{prefix}.ln1"), x)?;
    let a = multi_head_attention(g, p, &format!("{prefix}.attn"), h, cfg.n_heads, met_tokens, layout, key_mask)?;
    let a = g.dropout(a, cfg.dropout, rng, training)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, p, &format!("{prefix}.ln2"), x)?;
    let w1 = g.param(p, &format!("{prefix}.mlp.w1"))?;
    let b1 = g.param(p, &format!("{prefix}.mlp.b1"))?;
    let w2 = g.param(p, &format!("{prefix}.mlp.w2"))?;
    let b2 = g.param(p, &format!("{prefix}.mlp.b2"))?;
    let m = g.linear(h, w1, b1)?;
    let m = g.gelu(m)?;
    let m = g.linear(m, w2, b2)?;
    let m = g.dropout(m, cfg.dropout, rng, training)?;
    g.add(x, m)
}

/// Image encoder: `n_layers` blocks whose attention logits carry the
/// meteorological bias (recomputed per layer from that layer's met
/// projections), followed by a final layer norm. `met_tokens = None`
/// gives a plain ViT encoder.
pub fn stmm_encoder(
    g: &mut Graph,
    p: &ParamStore,
    tokens: Var,
    met_tokens: Option<Var>,
    cfg: &ModelConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    let layout = TokenLayout {
        timesteps: cfg.timesteps,
        patches_per_step: cfg.patches_per_step(),
        cls: true,
    };
    let mut x = tokens;
    for l in 0..cfg.n_layers {
        x = encoder_block(g, p, &format!("enc.{l}"), x, cfg, met_tokens, layout, None, rng, training)?;
    }
    layer_norm(g, p, "enc.ln", x)
}
