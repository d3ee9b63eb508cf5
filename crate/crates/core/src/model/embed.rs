use super::config::ModelConfig;
use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Splits a T×C×H×W image into (T·N_p) × (C·p²) patch vectors.
///
/// Tokens are ordered timestep-major, patches row-major within a step;
/// each vector is laid out channel, row, column.
pub fn patchify(image: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let s = image.shape();
    let expect = [cfg.timesteps, cfg.n_channels, cfg.crop_px, cfg.crop_px];
    if s != expect {
        return Err(dim_err!("image shape {s:?}, model expects {expect:?}"));
    }
    let (t, c, n, p) = (cfg.timesteps, cfg.n_channels, cfg.crop_px, cfg.patch_px);
    let per_row = n / p;
    let np = per_row * per_row;
    let dim = cfg.patch_dim();
    let src = image.data();
    let mut out = vec![0.0; t * np * dim];
    for ti in 0..t {
        for pi in 0..np {
            let (r0, c0) = ((pi / per_row) * p, (pi % per_row) * p);
            let row = &mut out[(ti * np + pi) * dim..(ti * np + pi + 1) * dim];
            for ch in 0..c {
                for r in 0..p {
                    let base = ((ti * c + ch) * n + r0 + r) * n + c0;
                    row[(ch * p + r) * p..(ch * p + r + 1) * p].copy_from_slice(&src[base..base + p]);
                }
            }
        }
    }
    Tensor::new(vec![t * np, dim], out)
}

/// Projects patches to d, prepends the CLS vector and adds the temporal
/// embedding row of each token's timestep (row 0 for CLS, row t+1 for
/// timestep t).
pub fn embed_patches(g: &mut Graph, p: &ParamStore, image: &Tensor, cfg: &ModelConfig) -> Result<Var> {
    let patches = g.constant(patchify(image, cfg)?);
    let w = g.param(p, "patch.w")?;
    let b = g.param(p, "patch.b")?;
    let proj = g.linear(patches, w, b)?;
    let cls = g.param(p, "cls")?;
    let seq = g.concat_rows(&[cls, proj])?;
    let np = cfg.patches_per_step();
    let rows: Vec<usize> = std::iter::once(0)
        .chain((0..cfg.timesteps * np).map(|i| 1 + i / np))
        .collect();
    let tmp = g.param(p, "tmp_embed")?;
    let pos = g.select_rows(tmp, &rows)?;
    g.add(seq, pos)
}

/// One d-dimensional token per timestep: `climate·W + b`.
pub fn embed_met(g: &mut Graph, p: &ParamStore, climate: &Tensor, cfg: &ModelConfig) -> Result<Var> {
    if climate.shape() != [cfg.timesteps, cfg.n_met] {
        return Err(dim_err!(
            "climate shape {:?}, model expects [{}, {}]",
            climate.shape(),
            cfg.timesteps,
            cfg.n_met
        ));
    }
    let c = g.constant(climate.clone());
    let w = g.param(p, "met.w")?;
    let b = g.param(p, "met.b")?;
    g.linear(c, w, b)
}
