//! A small trainable transformer encoder over a hashed vocabulary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

use super::tokenize::TokenSequence;

const PAD_TOKEN: &str = "<pad>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEncoderConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub ff_width: Option<usize>,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
}

fn default_width() -> usize {
    64
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_buckets() -> usize {
    16384
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self {
            width: default_width(),
            layers: default_layers(),
            heads: default_heads(),
            ff_width: None,
            buckets: default_buckets(),
        }
    }
}

impl ToyEncoderConfig {
    pub fn ff(&self) -> usize {
        self.ff_width.unwrap_or(2 * self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("encoder.width", "must be positive"));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::config(
                "encoder.heads",
                format!("must divide width {}", self.width),
            ));
        }
        if self.buckets == 0 {
            return Err(Error::config("encoder.buckets", "must be positive"));
        }
        if self.ff() == 0 {
            return Err(Error::config("encoder.ff_width", "must be positive"));
        }
        Ok(())
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let d = self.width;
        store.insert("enc.embed", Tensor::uniform(&[self.buckets, d], 1.0, rng));
        for l in 0..self.layers {
            let p = format!("enc.l{l}");
            for w in ["wq", "wk", "wv", "wo"] {
                store.insert(format!("{p}.{w}"), glorot(d, d, rng));
            }
            store.insert(format!("{p}.bo"), Tensor::zeros(&[1, d]));
            store.insert(format!("{p}.ln1.gamma"), Tensor::full(&[1, d], 1.0));
            store.insert(format!("{p}.ln1.beta"), Tensor::zeros(&[1, d]));
            store.insert(format!("{p}.ff.w1"), glorot(d, self.ff(), rng));
            store.insert(format!("{p}.ff.b1"), Tensor::zeros(&[1, self.ff()]));
            store.insert(format!("{p}.ff.w2"), glorot(self.ff(), d, rng));
            store.insert(format!("{p}.ff.b2"), Tensor::zeros(&[1, d]));
            store.insert(format!("{p}.ln2.gamma"), Tensor::full(&[1, d], 1.0));
            store.insert(format!("{p}.ln2.beta"), Tensor::zeros(&[1, d]));
        }
    }

    /// Token states `[max(|T|,1) x d]`; an empty sequence is encoded as one
    /// padding token.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, seq: &TokenSequence) -> Result<Var<'t>> {
        let d = self.width;
        let ids: Vec<usize> = if seq.is_empty() {
            vec![bucket(PAD_TOKEN, self.buckets)]
        } else {
            seq.tokens.iter().map(|t| bucket(&t.text, self.buckets)).collect()
        };
        let emb = tape.param_rows(store, "enc.embed", &ids)?;
        let pos = tape.constant(sinusoidal_positions(ids.len(), d));
        let mut x = emb.add(pos)?;
        for l in 0..self.layers {
            let p = format!("enc.l{l}");
            let attn = self.self_attention(tape, store, &p, x)?;
            x = affine_norm(tape, store, &format!("{p}.ln1"), x.add(attn)?)?;
            let hid = x
                .matmul(tape.param(store, &format!("{p}.ff.w1"))?)?
                .add_row(tape.param(store, &format!("{p}.ff.b1"))?)?
                .gelu()?;
            let ff = hid
                .matmul(tape.param(store, &format!("{p}.ff.w2"))?)?
                .add_row(tape.param(store, &format!("{p}.ff.b2"))?)?;
            x = affine_norm(tape, store, &format!("{p}.ln2"), x.add(ff)?)?;
        }
        Ok(x)
    }

    fn self_attention<'t>(&self, tape: &'t Tape, store: &ParamStore, p: &str, x: Var<'t>) -> Result<Var<'t>> {
        let w = |n: &str| tape.param(store, &format!("{p}.{n}"));
        let q = x.matmul(w("wq")?)?;
        let k = x.matmul(w("wk")?)?;
        let v = x.matmul(w("wv")?)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(a, b)?;
            let kh = k.slice_cols(a, b)?;
            let vh = v.slice_cols(a, b)?;
            let att = qh.matmul(kh.transpose()?)?.scale(scale)?.softmax()?;
            heads.push(att.matmul(vh)?);
        }
        concat_cols(&heads)?.matmul(w("wo")?)?.add_row(w("bo")?)
    }
}

fn affine_norm<'t>(tape: &'t Tape, store: &ParamStore, p: &str, x: Var<'t>) -> Result<Var<'t>> {
    x.layer_norm()?
        .mul_row(tape.param(store, &format!("{p}.gamma"))?)?
        .add_row(tape.param(store, &format!("{p}.beta"))?)
}

pub(crate) fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], limit, rng)
}

/// FNV-1a bucket of a token.
pub fn bucket(token: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("shape")
}
