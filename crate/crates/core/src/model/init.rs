use super::config::ModelConfig;
use crate::error::Result;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder {
    store: ParamStore,
    rng: Rng,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> Result<()> {
        let t = match init {
            Init::Normal => Tensor::from_fn(shape, |_| self.rng.truncated_normal(INIT_STD)),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, 1.0),
        };
        self.store.insert(name, t)
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) -> Result<()> {
        self.add(format!("{prefix}.g"), &[d], Init::Ones)?;
        self.add(format!("{prefix}.b"), &[d], Init::Zeros)
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.add(format!("{prefix}.{w}"), &[fan_in, fan_out], Init::Normal)?;
        self.add(format!("{prefix}.{b}"), &[fan_out], Init::Zeros)
    }

    fn block(&mut self, prefix: &str, cfg: &ModelConfig, with_met: bool) -> Result<()> {
        let d = cfg.d_model;
        self.layer_norm(&format!("{prefix}.ln1"), d)?;
        let attn = format!("{prefix}.attn");
        for (w, b) in [("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")] {
            self.linear(&attn, w, b, d, d)?;
        }
        if with_met {
            self.add(format!("{attn}.met_wq"), &[d, d], Init::Normal)?;
            self.add(format!("{attn}.met_wk"), &[d, d], Init::Normal)?;
        }
        self.layer_norm(&format!("{prefix}.ln2"), d)?;
        let mlp = format!("{prefix}.mlp");
        self.linear(&mlp, "w1", "b1", d, cfg.mlp_hidden)?;
        self.linear(&mlp, "w2", "b2", cfg.mlp_hidden, d)
    }
}

/// Freshly initialized parameters: truncated normal (σ = 0.02, cut at 2σ)
/// for projections and embeddings, zeros for biases and the temporal
/// embedding, unit gains for layer norms.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.d_model;
    let mut b = Builder {
        store: ParamStore::new(),
        rng: Rng::derive(seed, &[0x1417]),
    };
    b.linear("patch", "w", "b", cfg.patch_dim(), d)?;
    b.add("cls".into(), &[1, d], Init::Normal)?;
    b.add("tmp_embed".into(), &[cfg.timesteps + 1, d], Init::Zeros)?;
    b.linear("met", "w", "b", cfg.n_met, d)?;
    for l in 0..cfg.n_layers {
        b.block(&format!("enc.{l}"), cfg, true)?;
    }
    b.layer_norm("enc.ln", d)?;
    b.add("ctx.embed".into(), &[cfg.vocab_size, d], Init::Normal)?;
    b.add("ctx.pos".into(), &[cfg.max_context_len, d], Init::Normal)?;
    for l in 0..cfg.n_layers {
        b.block(&format!("ctx.{l}"), cfg, false)?;
    }
    b.layer_norm("ctx.ln", d)?;
    b.add("ctx.null".into(), &[1, d], Init::Normal)?;
    for w in ["wq", "wk", "wv"] {
        b.add(format!("xattn.{w}"), &[d, d], Init::Normal)?;
    }
    let pix = cfg.patch_px * cfg.patch_px;
    b.linear("head", "w", "b", d, pix)?;
    Ok(b.store)
}
