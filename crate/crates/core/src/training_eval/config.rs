use serde::{Deserialize, Serialize};

use super::optim::AdamHyper;
use crate::error::{Error, Result};
use crate::featurize::FeaturizeConfig;
use crate::model::ModelConfig;
use crate::text_bank::BankSource;

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Few-shot samples per class drawn from the test domain.
    pub n_shot: usize,
    pub val_fraction: f64,
    pub eval_batch: usize,
    pub model: ModelConfig,
    pub featurize: FeaturizeConfig,
    pub bank: BankSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            lr0: 1e-4,
            lr_min: 0.0,
            weight_decay: 0.003,
            batch_size: 64,
            max_epochs: 300,
            patience: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            n_shot: 0,
            val_fraction: 0.1,
            eval_batch: 64,
            bank: BankSource::Stub {
                dim: model.proj_dim,
                seed: 0,
            },
            model,
            featurize: FeaturizeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Small, fast configuration used by the examples and acceptance tests.
    pub fn toy() -> Self {
        let model = ModelConfig {
            frames: 2,
            ..ModelConfig::toy()
        };
        let featurize = FeaturizeConfig {
            frames_per_sample: model.frames,
            out_h: model.height,
            out_w: model.width,
            ..FeaturizeConfig::default()
        };
        Self {
            lr0: 3e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 10,
            bank: BankSource::Stub {
                dim: model.proj_dim,
                seed: 0,
            },
            model,
            featurize,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Copies the featurizer's output shape into the model input shape.
    pub fn sync_model_input(&mut self) {
        self.model.frames = self.featurize.frames_per_sample;
        self.model.bands = self.featurize.band_set.bands.len();
        self.model.height = self.featurize.out_h;
        self.model.width = self.featurize.out_w;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: String| Err(Error::config(f, r));
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(
                "patience",
                format!("{} exceeds max_epochs = {}", self.patience, self.max_epochs),
            );
        }
        if !(self.lr0 > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr0 {
            return bad("lr0", "need lr0 > 0 and 0 ≤ lr_min ≤ lr0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("beta1", "betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", "must lie in [0, 1)".into());
        }
        if self.eval_batch == 0 {
            return bad("eval_batch", "must be at least 1".into());
        }
        self.model.validate()?;
        let m = &self.model;
        let f = &self.featurize;
        let want = [f.frames_per_sample, f.band_set.bands.len(), f.out_h, f.out_w];
        let have = [m.frames, m.bands, m.height, m.width];
        if want != have {
            return bad(
                "model",
                format!("model input {have:?} does not match featurizer output {want:?}"),
            );
        }
        if let BankSource::Stub { dim, .. } = self.bank {
            if dim != m.proj_dim && matches!(m.head, crate::model::HeadKind::Matching) {
                return bad(
                    "bank.dim",
                    format!("stub dimension {dim} must equal model.proj_dim = {}", m.proj_dim),
                );
            }
        }
        Ok(())
    }
}
