//! Token-level hidden states and pooled sequence vectors behind one boundary:
//! either the built-in trainable encoder or frozen states loaded from a file.

mod precomputed;
mod tokenize;
mod toy;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub use precomputed::{PrecomputedEntry, PrecomputedStore, ENC_MAGIC};
pub use tokenize::{tokenize, ByteSpan, Token, TokenSequence};
pub use toy::{bucket, sinusoidal_positions, ToyEncoderConfig};
pub(crate) use toy::glorot;

/// Plain values of an encoded sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// `[|T| x d]`
    pub hidden: Tensor,
    /// `[1 x d]`
    pub pooled: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum EncoderConfig {
    Toy(ToyEncoderConfig),
    Precomputed { path: PathBuf, width: usize },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Toy(ToyEncoderConfig::default())
    }
}

impl EncoderConfig {
    pub fn width(&self) -> usize {
        match self {
            EncoderConfig::Toy(c) => c.width,
            EncoderConfig::Precomputed { width, .. } => *width,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, EncoderConfig::Toy(_))
    }
}

/// A resolved provider.
#[derive(Clone, Debug)]
pub enum Encoder {
    Toy(ToyEncoderConfig),
    Precomputed {
        store: Arc<PrecomputedStore>,
        width: usize,
    },
}

/// Encoder output recorded on a tape.
pub struct Encoded<'t> {
    pub hidden: Var<'t>,
    pub pooled: Var<'t>,
    pub offsets: Vec<ByteSpan>,
}

impl Encoder {
    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        match cfg {
            EncoderConfig::Toy(c) => {
                c.validate()?;
                Ok(Encoder::Toy(c.clone()))
            }
            EncoderConfig::Precomputed { path, width } => {
                let store = PrecomputedStore::load(path)?;
                if let Some(w) = store.width() {
                    if w != *width {
                        return Err(Error::dim("load_precomputed", &[w], &[*width]));
                    }
                }
                Ok(Encoder::Precomputed {
                    store: Arc::new(store),
                    width: *width,
                })
            }
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Encoder::Toy(c) => c.width,
            Encoder::Precomputed { width, .. } => *width,
        }
    }

    /// Token offsets this provider aligns spans against.
    pub fn offsets(&self, id: &str, text: &str) -> Result<Vec<ByteSpan>> {
        match self {
            Encoder::Toy(_) => Ok(tokenize(text).offsets()),
            Encoder::Precomputed { store, width } => Ok(store.get(id, *width)?.offsets.clone()),
        }
    }

    pub fn encode<'t>(&self, tape: &'t Tape, params: &ParamStore, id: &str, text: &str) -> Result<Encoded<'t>> {
        match self {
            Encoder::Toy(cfg) => {
                let seq = tokenize(text);
                let hidden = cfg.forward(tape, params, &seq)?;
                let pooled = hidden.mean_rows()?;
                Ok(Encoded {
                    hidden,
                    pooled,
                    offsets: seq.offsets(),
                })
            }
            Encoder::Precomputed { store, width } => {
                let entry = store.get(id, *width)?;
                let mut hidden = entry.output.hidden.clone();
                if hidden.rows() == 0 {
                    // attention over tokens needs one key
                    hidden = entry.output.pooled.clone();
                }
                Ok(Encoded {
                    hidden: tape.constant(hidden),
                    pooled: tape.constant(entry.output.pooled.clone()),
                    offsets: entry.offsets.clone(),
                })
            }
        }
    }
}

/// Indices of tokens whose byte range intersects `[start, end)`.
pub fn overlapping_tokens(offsets: &[ByteSpan], start: usize, end: usize) -> Vec<usize> {
    offsets
        .iter()
        .enumerate()
        .filter(|(_, s)| s.intersects(start, end))
        .map(|(i, _)| i)
        .collect()
}

/// Mean of the hidden states of the tokens overlapping a byte range.
pub fn span_pool<'t>(hidden: Var<'t>, offsets: &[ByteSpan], bytes: std::ops::Range<usize>) -> Result<Var<'t>> {
    let idx = overlapping_tokens(offsets, bytes.start, bytes.end);
    if idx.is_empty() {
        return Err(Error::NoTokenOverlap {
            start: bytes.start,
            end: bytes.end,
        });
    }
    hidden.gather_rows(&idx)?.mean_rows()
}

/// [`span_pool`] on plain values.
pub fn span_pool_values(output: &EncoderOutput, offsets: &[ByteSpan], bytes: std::ops::Range<usize>) -> Result<Tensor> {
    let tape = Tape::new();
    let h = tape.constant(output.hidden.clone());
    Ok(span_pool(h, offsets, bytes)?.value())
}
