use super::config::ModelConfig;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// Flat gather map from the (T·N_p)×p² head output to T×H×W maps.
pub fn reassembly_index(cfg: &ModelConfig) -> Vec<Option<usize>> {
    let (n, p) = (cfg.crop_px, cfg.patch_px);
    let per_row = n / p;
    let np = per_row * per_row;
    let mut idx = Vec::with_capacity(cfg.timesteps * n * n);
    for t in 0..cfg.timesteps {
        for r in 0..n {
            for c in 0..n {
                let patch = (r / p) * per_row + c / p;
                let within = (r % p) * p + c % p;
                idx.push(Some((t * np + patch) * p * p + within));
            }
        }
    }
    idx
}

/// Linear per-patch pixel head. Each non-CLS token becomes the p×p pixels
/// of its patch in its week's map; the CLS token is ignored.
pub fn decode_yield(g: &mut Graph, p: &ParamStore, tokens: Var, cfg: &ModelConfig) -> Result<Var> {
    let (l, _) = g.value(tokens).dims2()?;
    if l != cfg.seq_len() {
        return Err(dim_err!("decoder got {l} tokens, expected {}", cfg.seq_len()));
    }
    let rows: Vec<usize> = (1..l).collect();
    let body = g.select_rows(tokens, &rows)?;
    let w = g.param(p, "head.w")?;
    let b = g.param(p, "head.b")?;
    let pix = g.linear(body, w, b)?;
    g.gather(pix, reassembly_index(cfg), &[cfg.timesteps, cfg.crop_px, cfg.crop_px])
}
