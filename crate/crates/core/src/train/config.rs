use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::fusion::{DecayTclConfig, PredNorm, TclDenominator};
use crate::model::ModelConfig;

/// Everything `train` reads from its JSON config. Missing keys take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied at each milestone.
    pub lr_decay: f64,
    /// Milestones as fractions of `epochs`.
    pub lr_milestones: Vec<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of the contrastive term.
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tcl_denominator: TclDenominator,
    pub pred_norm: PredNorm,
    /// Early-stopping patience in epochs without validation improvement.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// train : val : test.
    pub split: [f64; 3],
    pub train_stride: usize,
    /// Defaults to the horizon, so test windows do not overlap.
    pub eval_stride: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 100,
            batch_size: 32,
            lr: 0.005,
            lr_decay: 0.1,
            lr_milestones: vec![0.5, 0.75],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 0.1,
            lambda1: 1.0,
            lambda2: 0.8,
            tcl_denominator: TclDenominator::default(),
            pred_norm: PredNorm::default(),
            patience: 10,
            clip_norm: 5.0,
            split: [7.0, 1.0, 2.0],
            train_stride: 1,
            eval_stride: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.train_stride == 0 || self.eval_stride == Some(0) {
            return bad("epochs, batch_size and strides must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return bad(format!("lr and lr_decay must be positive, got {} and {}", self.lr, self.lr_decay));
        }
        if self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("lr_milestones are fractions of the epoch budget in [0, 1]".into());
        }
        if !(self.gamma >= 0.0) || !(self.clip_norm >= 0.0) {
            return bad("gamma and clip_norm must be non-negative".into());
        }
        self.tcl()?;
        self.model.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn tcl(&self) -> Result<DecayTclConfig, TrainError> {
        let cfg = DecayTclConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            denominator: self.tcl_denominator,
            ..DecayTclConfig::new(self.model.horizon)
        };
        cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Learning rate for a 0-based epoch: `lr * decay^k` once k milestones
    /// `floor(fraction * epochs)` have been reached. A milestone that rounds
    /// to epoch 0 never fires.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .map(|&m| (m * self.epochs as f64).floor() as usize)
            .filter(|&m| m > 0 && epoch >= m)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }

    pub fn eval_stride(&self) -> usize {
        self.eval_stride.unwrap_or(self.model.horizon)
    }
}
