//! Management-text tokenizer and the self-attention context encoder.
//!
//! Tokenization (also described in `docs/tokenizer.md`):
//!
//! 1. Lowercase the input (Unicode `to_lowercase`).
//! 2. Scan characters. A run of alphabetic characters is one word token.
//!    A run of digits, optionally with `.` or `,` between two digits, is a
//!    number and is emitted one character per token (`6.5` → `6`, `.`, `5`).
//!    Everything else separates tokens and is dropped.
//! 3. Each token maps to `2 + fnv1a64(utf8) mod (vocab − 2)`; id 0 is PAD
//!    and id 1 is BOS.
//! 4. The sequence is `BOS, tokens…`, truncated to `max_len` and then
//!    padded with PAD up to `max_len`.

use crate::error::{dim_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::model::attention::TokenLayout;
use crate::model::encoder::{encoder_block, layer_norm};
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::rng::Rng;

pub const VOCAB_SIZE: usize = 4096;
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const DEFAULT_MAX_LEN: usize = 128;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenIds {
    pub ids: Vec<u32>,
    pub max_len: usize,
}

impl TokenIds {
    pub fn pad_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i == PAD).collect()
    }
}

/// Splits lowercased text into word and single-character number tokens.
pub fn split_tokens(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() {
            while i < chars.len() {
                let ch = chars[i];
                let joins = (ch == '.' || ch == ',')
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                if ch.is_ascii_digit() || joins {
                    out.push(ch.to_string());
                    i += 1;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
    }
    out
}

pub fn token_id(token: &str, vocab_size: usize) -> u32 {
    (2 + fnv1a64(token.as_bytes()) % (vocab_size as u64 - 2)) as u32
}

/// Deterministic hash tokenization into `max_len` ids (at least 1).
pub fn tokenize_with_vocab(text: &str, max_len: usize, vocab_size: usize) -> TokenIds {
    let max_len = max_len.max(1);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(
        split_tokens(text)
            .iter()
            .take(max_len - 1)
            .map(|t| token_id(t, vocab_size)),
    );
    ids.resize(max_len, PAD);
    TokenIds { ids, max_len }
}

pub fn tokenize(text: &str, max_len: usize) -> TokenIds {
    tokenize_with_vocab(text, max_len, VOCAB_SIZE)
}

/// Encoded context: L_c×d token matrix and its padding mask.
#[derive(Clone, Debug)]
pub struct ContextEmbedding {
    pub tokens: Var,
    /// `true` at padded positions.
    pub pad_mask: Vec<bool>,
}

/// Embedding lookup plus learned positions, `n_layers` pre-norm
/// self-attention blocks with padded keys masked out, and a final layer
/// norm.
pub fn encode_context(
    g: &mut Graph,
    p: &ParamStore,
    ids: &TokenIds,
    cfg: &ModelConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<ContextEmbedding> {
    let l = ids.ids.len();
    if l == 0 || l > cfg.max_context_len {
        return Err(dim_err!("{l} context tokens, model allows 1..={}", cfg.max_context_len));
    }
    if let Some(bad) = ids.ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(Error::Usage(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    let table = g.param(p, "ctx.embed")?;
    let rows: Vec<usize> = ids.ids.iter().map(|&i| i as usize).collect();
    let emb = g.select_rows(table, &rows)?;
    let pos_table = g.param(p, "ctx.pos")?;
    let pos = g.select_rows(pos_table, &(0..l).collect::<Vec<_>>())?;
    let mut x = g.add(emb, pos)?;
    let pad_mask = ids.pad_mask();
    let layout = TokenLayout {
        timesteps: l,
        patches_per_step: 1,
        cls: false,
    };
    for layer in 0..cfg.n_layers {
        x = encoder_block(g, p, &format!("ctx.{layer}"), x, cfg, None, layout, Some(&pad_mask), rng, training)?;
    }
    let tokens = layer_norm(g, p, "ctx.ln", x)?;
    Ok(ContextEmbedding { tokens, pad_mask })
}

/// Stand-in context used when the management modality is masked out: the
/// single learned `ctx.null` token.
pub fn null_context(g: &mut Graph, p: &ParamStore) -> Result<ContextEmbedding> {
    Ok(ContextEmbedding {
        tokens: g.param(p, "ctx.null")?,
        pad_mask: vec![false],
    })
}
