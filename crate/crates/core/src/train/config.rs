use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, DROPOUT_RATE};
use crate::error::{Result, UbpError};
use crate::uncertainty::{RadiusRule, DEFAULT_C, DEFAULT_MOMENTUM, DEFAULT_R0, DEFAULT_Z};

pub const INTRA_LR: f64 = 1e-4;
pub const INTER_LR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Train and test on one subject.
    Intra,
    /// Leave one subject out.
    Inter,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Intra => "intra",
            Mode::Inter => "inter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` picks the mode's default.
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub r0: f64,
    pub c: f64,
    pub z: f64,
    pub ema_momentum: f64,
    pub blur_lambda: f64,
    pub seed: u64,
    pub mode: Mode,
    pub flip_radius_rule: bool,
    pub normalize_embeddings: bool,
    pub patience: usize,
    pub dropout: f64,
    /// When false every pair uses the base level (no adaptive blur).
    pub blur_prior: bool,
    /// Fraction of training images held out for early stopping.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 50,
            lr: None,
            weight_decay: 1e-4,
            r0: DEFAULT_R0,
            c: DEFAULT_C,
            z: DEFAULT_Z,
            ema_momentum: DEFAULT_MOMENTUM,
            blur_lambda: crate::blur::DEFAULT_LAMBDA,
            seed: 0,
            mode: Mode::Intra,
            flip_radius_rule: false,
            normalize_embeddings: true,
            patience: 10,
            dropout: DROPOUT_RATE,
            blur_prior: true,
            val_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.mode {
            Mode::Intra => INTRA_LR,
            Mode::Inter => INTER_LR,
        })
    }

    pub fn rule(&self) -> RadiusRule {
        RadiusRule {
            r0: self.r0,
            c: self.c,
            flip: self.flip_radius_rule,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dropout: self.dropout,
            normalize_embeddings: self.normalize_embeddings,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(UbpError::Config(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("lr must be positive, got {lr}"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.c >= 0.0 && self.c.is_finite() && self.r0.is_finite()) {
            return bad("r0 must be finite and c non-negative".into());
        }
        if !(self.z >= 0.0 && self.z.is_finite()) {
            return bad(format!("z must be non-negative, got {}", self.z));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return bad(format!("ema_momentum must lie in [0, 1), got {}", self.ema_momentum));
        }
        if !(self.blur_lambda >= 0.0 && self.blur_lambda.is_finite()) {
            return bad(format!("blur_lambda must be non-negative, got {}", self.blur_lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}
