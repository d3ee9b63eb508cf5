//! The multimodal network: patch/temporal embedding, the climate-biased
//! image encoder, cross-attention onto the context encoding, and the
//! per-week pixel decoder.

pub mod attention;
mod config;
pub mod decode;
pub mod embed;
pub mod encoder;
mod init;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{encode_context, null_context, tokenize_with_vocab, TokenIds};
use crate::dataset::{FieldSample, NormStats};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use attention::{cross_attention, multi_head_attention, stmm_attention, MetBias, TokenLayout};
pub use config::{ModalityMask, ModelConfig};
pub use decode::decode_yield;
pub use embed::{embed_met, embed_patches, patchify};
pub use encoder::stmm_encoder;
pub use init::init_params;

/// Network-ready view of one sample: standardized image and climate plus
/// context token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub image: Tensor,
    pub climate: Tensor,
    pub context: TokenIds,
}

impl ModelInput {
    pub fn from_sample(sample: &FieldSample, norm: &NormStats, cfg: &ModelConfig) -> Self {
        Self {
            image: norm.normalize_image(&sample.image),
            climate: norm.normalize_climate(&sample.climate),
            context: tokenize_with_vocab(&sample.context_text, cfg.max_context_len, cfg.vocab_size),
        }
    }
}

/// Same as [`cross_attention`], named after its role in the network.
pub fn cross_fuse(
    g: &mut Graph,
    p: &ParamStore,
    x: Var,
    context: &crate::context::ContextEmbedding,
) -> Result<Var> {
    cross_attention(g, p, x, context.tokens, &context.pad_mask)
}

/// Full forward pass to T×H×W weekly maps in standardized target units.
///
/// With climate masked the encoder runs without the meteorological bias;
/// with context masked the cross-attention sees only the learned null token.
pub fn forward(
    g: &mut Graph,
    p: &ParamStore,
    cfg: &ModelConfig,
    input: &ModelInput,
    mask: ModalityMask,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    let tokens = embed_patches(g, p, &input.image, cfg)?;
    let met = if mask.use_climate {
        Some(embed_met(g, p, &input.climate, cfg)?)
    } else {
        None
    };
    let encoded = stmm_encoder(g, p, tokens, met, cfg, rng, training)?;
    let context = if mask.use_context {
        encode_context(g, p, &input.context, cfg, rng, training)?
    } else {
        null_context(g, p)?
    };
    let fused = cross_fuse(g, p, encoded, &context)?;
    decode_yield(g, p, fused, cfg)
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    use_climate: bool,
    use_context: bool,
}

pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const NORM_FILE: &str = "norm.json";

/// Trained network with everything needed for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub norm: NormStats,
    pub mask: ModalityMask,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64, norm: NormStats, mask: ModalityMask) -> Result<Self> {
        Ok(Self {
            params: init_params(&config, seed)?,
            config,
            norm,
            mask,
        })
    }

    /// Inference on one sample: T×H×W yield maps in t/ha.
    pub fn predict(&self, sample: &FieldSample) -> Result<Tensor> {
        let input = ModelInput::from_sample(sample, &self.norm, &self.config);
        let mut g = Graph::inference();
        let mut rng = Rng::new(0);
        let out = forward(&mut g, &self.params, &self.config, &input, self.mask, &mut rng, false)?;
        let mut t = g.value(out).clone();
        for v in t.data_mut() {
            *v = self.norm.denormalize_target(*v);
        }
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.params.save(&dir.join(PARAMS_FILE))?;
        let cfg = CheckpointConfig {
            model: self.config.clone(),
            use_climate: self.mask.use_climate,
            use_context: self.mask.use_context,
        };
        let p = dir.join(CONFIG_FILE);
        fs::write(&p, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(NORM_FILE);
        fs::write(&p, serde_json::to_string_pretty(&self.norm)?).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(CONFIG_FILE);
        let cfg: CheckpointConfig =
            serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let p = dir.join(NORM_FILE);
        let norm: NormStats = serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let params = ParamStore::load(&dir.join(PARAMS_FILE))?;
        let reference = init_params(&cfg.model, 0)?;
        if reference.names() != params.names()
            || reference.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Data(format!(
                "{}: parameters do not match the stored model config",
                dir.display()
            )));
        }
        Ok(Self {
            config: cfg.model,
            params,
            norm,
            mask: ModalityMask {
                use_climate: cfg.use_climate,
                use_context: cfg.use_context,
            },
        })
    }
}
