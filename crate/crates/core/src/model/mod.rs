//! The classifier: encoder, opinion graphs, fusion, residual and linear head.

mod config;
mod fusion;

pub use config::{FusionKind, ModelConfig, OptimConfig, ALPHA_RES, BATCH_SIZES, HEAD_COUNTS, OUT_DIMS};
pub use fusion::{classify, fuse_attn, fuse_cat, fuse_gate, residual};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::dataset::{Record, NUM_CLASSES};
use crate::encoder::{glorot, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::gnn::{aggregate_sentence, build_skeleton, gat_forward, node_features, readout, with_roles, GraphSkeleton};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Values recorded by one forward pass.
pub struct Forward<'t> {
    /// `[1 x 12]`
    pub logits: Var<'t>,
    pub graphs: usize,
    pub has_opinions: bool,
    pub gate: Option<Var<'t>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::from_config(&config.encoder)?;
        Ok(Self { config, encoder })
    }

    /// Uses an already resolved encoder, e.g. an in-memory precomputed store.
    pub fn with_encoder(config: ModelConfig, encoder: Encoder) -> Result<Self> {
        config.validate()?;
        if encoder.width() != config.encoder.width() {
            return Err(Error::dim("Model::with_encoder", &[encoder.width()], &[config.encoder.width()]));
        }
        Ok(Self { config, encoder })
    }

    pub fn width(&self) -> usize {
        self.encoder.width()
    }

    pub fn is_baseline(&self) -> bool {
        self.config.fusion == FusionKind::None
    }

    /// Fresh parameters drawn from the configured seed.
    pub fn init_params(&self) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut store = ParamStore::new();
        let d = self.width();
        if let EncoderConfig::Toy(t) = &self.config.encoder {
            t.init_params(&mut store, &mut rng);
        }
        store.insert("head.w", glorot(d, NUM_CLASSES, &mut rng));
        store.insert("head.b", Tensor::zeros(&[1, NUM_CLASSES]));
        if self.is_baseline() {
            return store;
        }
        let gat = &self.config.gat;
        gat.init_params(&mut store, d, &mut rng);
        store.insert("fuse.proj.w", glorot(gat.output_width(), d, &mut rng));
        store.insert("fuse.proj.b", Tensor::zeros(&[1, d]));
        match self.config.fusion {
            FusionKind::Cat => {
                store.insert("fuse.cat.w", glorot(2 * d, d, &mut rng));
                store.insert("fuse.cat.b", Tensor::zeros(&[1, d]));
            }
            FusionKind::Gate => {
                store.insert("fuse.gate.w", glorot(2 * d, d, &mut rng));
                store.insert("fuse.gate.b", Tensor::zeros(&[1, d]));
            }
            FusionKind::Attn | FusionKind::None => {}
        }
        store
    }

    /// Graph skeletons of a record under this model's token offsets; opinions
    /// whose spans all miss the tokens are skipped with a warning.
    pub fn skeletons(&self, record: &Record) -> Result<Vec<GraphSkeleton>> {
        let offsets = self.encoder.offsets(&record.id, &record.text)?;
        let mut out = Vec::with_capacity(record.opinions.len());
        for (i, op) in record.opinions.iter().enumerate() {
            match build_skeleton(&record.text, op, &offsets, &self.config.gat.topology) {
                Ok(g) => out.push(g),
                Err(Error::GraphEmpty) => {
                    log::warn!("record {}: opinion {i} has no alignable span; skipped", record.id);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamStore, record: &Record) -> Result<Forward<'t>> {
        let enc = self.encoder.encode(tape, params, &record.id, &record.text)?;
        let h_seq = enc.pooled;
        let head = |x: Var<'t>| classify(x, tape.param(params, "head.w")?, tape.param(params, "head.b")?);
        if self.is_baseline() {
            return Ok(Forward {
                logits: head(h_seq)?,
                graphs: 0,
                has_opinions: false,
                gate: None,
            });
        }

        let gat = &self.config.gat;
        let skeletons = self.skeletons(record)?;
        let mut readouts = Vec::with_capacity(skeletons.len());
        for g in &skeletons {
            let x = node_features(g, enc.hidden, h_seq)?;
            let x = with_roles(tape, params, gat, g, x)?;
            readouts.push(readout(gat_forward(tape, params, gat, g, x)?.nodes)?);
        }
        let sentence = aggregate_sentence(tape, &readouts, gat.output_width())?;
        let h_g = sentence
            .vector
            .matmul(tape.param(params, "fuse.proj.w")?)?
            .add_row(tape.param(params, "fuse.proj.b")?)?;

        let p = |n: &str| tape.param(params, n);
        let (h_f, gate) = match self.config.fusion {
            FusionKind::Cat => (fuse_cat(h_seq, h_g, p("fuse.cat.w")?, p("fuse.cat.b")?)?, None),
            FusionKind::Gate => {
                let (f, g) = fuse_gate(h_seq, h_g, p("fuse.gate.w")?, p("fuse.gate.b")?)?;
                (f, Some(g))
            }
            FusionKind::Attn => (fuse_attn(h_g, enc.hidden)?, None),
            FusionKind::None => unreachable!("baseline handled above"),
        };
        let h_r = residual(h_seq, h_f, self.config.alpha_res)?;
        Ok(Forward {
            logits: head(h_r)?,
            graphs: skeletons.len(),
            has_opinions: sentence.has_opinions,
            gate,
        })
    }

    /// Logits as plain values.
    pub fn logits(&self, params: &ParamStore, record: &Record) -> Result<Tensor> {
        let tape = Tape::new();
        let f = self.forward(&tape, params, record)?;
        tape.check_finite()?;
        Ok(f.logits.value())
    }
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
