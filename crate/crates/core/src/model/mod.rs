//! The element constraint model, the edge pointer models, and their
//! training and sampling loops.

mod edge;
mod element;
mod nn;
mod train;

pub use edge::{EdgeBatchItem, EdgeModel, EdgeSample};
pub use element::{ElementBatchItem, ElementModel, ElementSample};
pub use nn::{Ctx, DecoderBlock, Pattern};
pub use train::{LossRecord, TrainConfig, TrainLog};

use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{order_elements, Codec, ElementConstraint, TokenSequence};
use crate::layout::{Layout, Quantizer};
use crate::tensor::{CheckpointError, ShapeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    pub d: usize,
    pub n_heads: usize,
    /// Element model blocks, or pointer decoder blocks of an edge model.
    pub n_layers_decoder: usize,
    /// Blocks of the edge model's element-embedding transformer.
    pub n_layers_encoder: usize,
    /// Condition encoder blocks; 0 builds an unconditional model.
    pub n_layers_condition_encoder: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn element(preset: Preset, vocab_size: usize, conditional: bool) -> Self {
        match preset {
            Preset::Paper => Self {
                preset,
                d: 384,
                n_heads: 12,
                n_layers_decoder: 12,
                n_layers_encoder: 0,
                n_layers_condition_encoder: if conditional { 8 } else { 0 },
                max_seq_len: 256,
                vocab_size,
                dropout: 0.2,
            },
            Preset::Desk => Self {
                preset,
                d: 64,
                n_heads: 4,
                n_layers_decoder: 3,
                n_layers_encoder: 0,
                n_layers_condition_encoder: if conditional { 2 } else { 0 },
                max_seq_len: 256,
                vocab_size,
                dropout: 0.0,
            },
        }
    }

    pub fn edge(preset: Preset, vocab_size: usize, conditional: bool) -> Self {
        match preset {
            Preset::Paper => Self {
                preset,
                d: 384,
                n_heads: 12,
                n_layers_decoder: 12,
                n_layers_encoder: 16,
                n_layers_condition_encoder: if conditional { 3 } else { 0 },
                max_seq_len: 512,
                vocab_size,
                dropout: 0.2,
            },
            Preset::Desk => Self {
                preset,
                d: 64,
                n_heads: 4,
                n_layers_decoder: 2,
                n_layers_encoder: 2,
                n_layers_condition_encoder: if conditional { 2 } else { 0 },
                max_seq_len: 512,
                vocab_size,
                dropout: 0.0,
            },
        }
    }

    pub fn conditional(&self) -> bool {
        self.n_layers_condition_encoder > 0
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "embedding size {} not divisible by {} heads",
                self.d, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("sequence of length {len} exceeds capacity {max}")]
    Capacity { len: usize, max: usize },
    #[error("edge token references element {index} of {n}")]
    Index { index: usize, n: usize },
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: u64, loss: f64 },
    #[error("model configuration: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("condition given to an unconditional model or missing for a conditional one")]
    Condition,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How the next token is drawn from the masked distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Greedy,
    Temperature(f64),
    Nucleus { p: f64, temperature: f64 },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Nucleus {
            p: 0.9,
            temperature: 1.0,
        }
    }
}

impl Strategy {
    /// Picks an index from `logits` restricted to entries where `allowed`
    /// holds. Returns `None` if nothing is allowed.
    pub fn pick(
        &self,
        logits: &[f32],
        allowed: impl Fn(usize) -> bool,
        rng: &mut impl Rng,
    ) -> Option<usize> {
        let cand: Vec<usize> = (0..logits.len()).filter(|&i| allowed(i)).collect();
        if cand.is_empty() {
            return None;
        }
        let argmax = || {
            cand.iter()
                .copied()
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if logits[b] >= logits[i] => Some(b),
                    _ => Some(i),
                })
        };
        let (temperature, top_p) = match *self {
            Strategy::Greedy => return argmax(),
            Strategy::Temperature(t) => (t, 1.0),
            Strategy::Nucleus { p, temperature } => (temperature, p),
        };
        if temperature <= 0.0 {
            return argmax();
        }
        let max = cand
            .iter()
            .map(|&i| logits[i] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<(usize, f64)> = cand
            .iter()
            .map(|&i| (i, ((logits[i] as f64 - max) / temperature).exp()))
            .collect();
        let z: f64 = probs.iter().map(|p| p.1).sum();
        probs.iter_mut().for_each(|p| p.1 /= z);
        if top_p < 1.0 {
            probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut cum = 0.0;
            let mut keep = probs.len();
            for (n, p) in probs.iter().enumerate() {
                cum += p.1;
                if cum >= top_p {
                    keep = n + 1;
                    break;
                }
            }
            probs.truncate(keep);
            let z: f64 = probs.iter().map(|p| p.1).sum();
            probs.iter_mut().for_each(|p| p.1 /= z);
        }
        let mut u: f64 = rng.gen();
        for &(i, p) in &probs {
            if u < p {
                return Some(i);
            }
            u -= p;
        }
        probs.last().map(|p| p.0)
    }
}

/// Condition sequence for boundary-constrained generation: one
/// `(type, x, y, w, h)` tuple per boundary rectangle, canonical order.
pub fn boundary_condition(
    codec: &Codec,
    boundary: &Layout,
) -> Result<TokenSequence, crate::codec::CodecError> {
    let q = Quantizer::coord();
    let mut seq = TokenSequence::default();
    for i in order_elements(boundary) {
        let e = &boundary.elements[i];
        let vals = [
            codec.type_token(e.elem_type),
            q.quantize(e.x)? as u16,
            q.quantize(e.y)? as u16,
            q.quantize(e.w)? as u16,
            q.quantize(e.h)? as u16,
        ];
        for (slot, v) in vals.into_iter().enumerate() {
            seq.values.push(v);
            seq.positions.push(seq.values.len() as u16);
            seq.types.push(slot as u8);
        }
    }
    Ok(seq)
}

/// Condition sequence for element-constrained generation: one
/// `(type, w, h)` tuple per requested room.
pub fn element_condition(codec: &Codec, rooms: &[ElementConstraint]) -> TokenSequence {
    let mut seq = TokenSequence::default();
    for r in rooms {
        for (slot, v) in [codec.type_token(r.elem_type), r.w_bin(), r.h_bin()]
            .into_iter()
            .enumerate()
        {
            seq.values.push(v);
            seq.positions.push(seq.values.len() as u16);
            seq.types.push(slot as u8);
        }
    }
    seq
}
