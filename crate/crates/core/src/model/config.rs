use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::gnn::GatConfig;

pub const BATCH_SIZES: [usize; 4] = [8, 16, 32, 64];
pub const OUT_DIMS: [usize; 4] = [384, 256, 192, 96];
pub const HEAD_COUNTS: [usize; 5] = [2, 3, 4, 6, 8];
pub const ALPHA_RES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Cat,
    #[serde(alias = "gated")]
    Gate,
    Attn,
    /// Text-only baseline.
    None,
}

impl FusionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Cat => "cat",
            FusionKind::Gate => "gate",
            FusionKind::Attn => "attn",
            FusionKind::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    /// Defaults to 1e-3 for a trainable encoder and 1e-4 otherwise.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub weighted_ce: bool,
}

fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    20
}
fn default_patience() -> usize {
    5
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: None,
            batch_size: default_batch(),
            epochs: default_epochs(),
            patience: default_patience(),
            weighted_ce: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub gat: GatConfig,
    #[serde(default = "default_fusion")]
    pub fusion: FusionKind,
    #[serde(default = "default_alpha")]
    pub alpha_res: f64,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_fusion() -> FusionKind {
    FusionKind::Gate
}
fn default_alpha() -> f64 {
    0.5
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            gat: GatConfig::default(),
            fusion: default_fusion(),
            alpha_res: default_alpha(),
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(field_of(&e.to_string()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn lr(&self) -> f64 {
        self.optim
            .lr
            .unwrap_or(if self.encoder.is_trainable() { 1e-3 } else { 1e-4 })
    }

    /// `alpha_res == 0` is accepted as the degenerate setting that reduces the
    /// fused model to the baseline.
    pub fn validate(&self) -> Result<()> {
        if let EncoderConfig::Toy(t) = &self.encoder {
            t.validate()?;
        }
        if self.encoder.width() == 0 {
            return Err(Error::config("encoder.width", "must be positive"));
        }
        self.gat.validate()?;
        if !BATCH_SIZES.contains(&self.optim.batch_size) {
            return Err(Error::config("optim.batch_size", format!("must be one of {BATCH_SIZES:?}")));
        }
        if !HEAD_COUNTS.contains(&self.gat.heads) {
            return Err(Error::config("gat.heads", format!("must be one of {HEAD_COUNTS:?}")));
        }
        if !self.encoder.is_trainable() && !OUT_DIMS.contains(&self.gat.out_dim) {
            return Err(Error::config("gat.out_dim", format!("must be one of {OUT_DIMS:?}")));
        }
        if self.alpha_res != 0.0 && !ALPHA_RES.contains(&self.alpha_res) {
            return Err(Error::config("alpha_res", format!("must be one of {ALPHA_RES:?}")));
        }
        if self.optim.epochs == 0 {
            return Err(Error::config("optim.epochs", "must be positive"));
        }
        match self.optim.lr {
            Some(lr) if !(lr > 0.0 && lr.is_finite()) => Err(Error::config("optim.lr", "must be positive")),
            _ => Ok(()),
        }
    }
}

/// Field named by a serde "unknown field `x`" message.
fn field_of(msg: &str) -> String {
    match msg.strip_prefix("unknown field ") {
        Some(rest) => rest.split('`').nth(1).unwrap_or("<config>").to_string(),
        None => "<config>".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn grid_membership() {
        let mut c = ModelConfig::default();
        c.optim.batch_size = 12;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "optim.batch_size"));
        let mut c = ModelConfig::default();
        c.gat.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.alpha_res = 0.3;
        assert!(c.validate().is_err());
        c.alpha_res = 0.0;
        c.validate().unwrap();
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ModelConfig::from_json(r#"{"fusoin":"cat"}"#).unwrap_err();
        assert!(matches!(err, Error::Config { field, .. } if field == "fusoin"));
    }

    #[test]
    fn gated_alias_and_lr_default() {
        let c = ModelConfig::from_json(r#"{"fusion":"gated","alpha_res":0.25}"#).unwrap();
        assert_eq!(c.fusion, FusionKind::Gate);
        assert_eq!(c.lr(), 1e-3);
    }
}
