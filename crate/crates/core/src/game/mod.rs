//! Co-operative predictor/explainer training.
//!
//! The predictor minimizes its Gaussian NLL plus `λ` times its distance to
//! the best-response explainer of each forecast step. Explainers are refit
//! from the current weights on every evaluation and enter the objective as
//! constants.

mod fixed_point;
mod objective;
mod train;

pub use fixed_point::{nonparametric_fixed_point, window_average_operator, FixedPoint};
pub use objective::{
    asymmetric_step_loss, center_penalty, explicit_step_loss, fit_best_responses, sequence_loss, step_loss,
    symmetric_step_loss, CenterFit, LossParts, LossValue,
};
pub use train::{train, train_mle, EpochRecord, TrainEvent, TrainLog};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ExplainerSettings;
use crate::predictor::{Parameterization, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GameMode {
    /// Penalty only at the neighborhood center.
    #[default]
    Asymmetric,
    /// Penalty averaged over every neighborhood member.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
    /// Stop after this many optimizer steps, if set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            adam_eps: defaults::adam_eps(),
            max_steps: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

mod defaults {
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn epochs() -> usize {
        200
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_eps() -> f64 {
        1e-8
    }
    pub fn epsilon() -> usize {
        9
    }
    pub fn ar_order() -> usize {
        2
    }
    pub fn ridge_alpha() -> f64 {
        1.0
    }
    pub fn reg_fraction() -> f64 {
        0.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: usize,
    #[serde(default = "defaults::ar_order")]
    pub ar_order: usize,
    #[serde(default = "defaults::ridge_alpha")]
    pub ridge_alpha: f64,
    #[serde(default)]
    pub mode: GameMode,
    #[serde(default)]
    pub parameterization: Parameterization,
    /// Fraction of each batch that receives the deviation penalty.
    #[serde(default = "defaults::reg_fraction")]
    pub reg_fraction: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            epsilon: defaults::epsilon(),
            ar_order: defaults::ar_order(),
            ridge_alpha: defaults::ridge_alpha(),
            mode: GameMode::default(),
            parameterization: Parameterization::default(),
            reg_fraction: defaults::reg_fraction(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.epsilon == 0 {
            return Err(Error::Config("epsilon must be >= 1".into()));
        }
        if self.ar_order == 0 {
            return Err(Error::Config("ar_order must be >= 1".into()));
        }
        if !(self.ridge_alpha >= 0.0 && self.ridge_alpha.is_finite()) {
            return Err(Error::Config("ridge_alpha must be finite and >= 0".into()));
        }
        if !(self.reg_fraction > 0.0 && self.reg_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "reg_fraction must lie in (0, 1], got {}",
                self.reg_fraction
            )));
        }
        self.optimizer.validate()
    }

    /// Errors when the model disagrees with the game on parameterization or order.
    pub fn check_model(&self, model: &Predictor) -> Result<()> {
        if model.parameterization() != self.parameterization {
            return Err(Error::Config(format!(
                "game expects a {:?} model, got {:?}",
                self.parameterization,
                model.parameterization()
            )));
        }
        if self.parameterization == Parameterization::Explicit && model.config().ar_order != self.ar_order {
            return Err(Error::Config(format!(
                "explicit model has K={}, game has K={}",
                model.config().ar_order,
                self.ar_order
            )));
        }
        Ok(())
    }

    pub fn explainer_settings(&self) -> ExplainerSettings {
        ExplainerSettings {
            epsilon: self.epsilon,
            ar_order: self.ar_order,
            ridge_alpha: self.ridge_alpha,
        }
    }
}
