use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{scale_learning_rate, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    SacN,
    Edac,
    LbSac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::SacN, Algorithm::Edac, Algorithm::LbSac];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::SacN => "sac-n",
            Algorithm::Edac => "edac",
            Algorithm::LbSac => "lb-sac",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?}")))
    }
}

/// Ensemble diversity term weighted by `eta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diversity {
    /// Mean pairwise cosine similarity of the critics' action-gradients.
    GradientCosine,
    /// Negative ensemble variance of Q. Cheaper, but not the EDAC objective.
    OutputVariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub ensemble_size: usize,
    pub batch_size: usize,
    pub base_batch_size: usize,
    pub base_lr: f64,
    /// Explicit learning rate; overrides any scaling.
    pub lr: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub eta: f64,
    pub diversity: Diversity,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub layer_norm: bool,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    /// Use the (scaled) network learning rate for the temperature too;
    /// otherwise the temperature uses `base_lr`.
    pub scale_temperature_lr: bool,
    pub initial_log_alpha: f64,
    pub max_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub probe_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        TrainConfig {
            algorithm,
            ensemble_size: 10,
            batch_size: match algorithm {
                Algorithm::LbSac => 10_000,
                _ => 256,
            },
            base_batch_size: 256,
            base_lr: 3e-4,
            lr: None,
            gamma: 0.99,
            tau: 5e-3,
            eta: match algorithm {
                Algorithm::Edac => 1.0,
                _ => 0.0,
            },
            diversity: Diversity::GradientCosine,
            target_entropy: None,
            layer_norm: false,
            hidden_dim: 256,
            hidden_layers: 3,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.0,
            scale_temperature_lr: true,
            initial_log_alpha: 0.0,
            max_steps: 1_000_000,
            eval_every: 1000,
            eval_episodes: 10,
            probe_size: 1024,
            seed: 0,
        }
    }

    /// Explicit `lr`, else square-root scaling for lb-sac, else `base_lr`.
    pub fn learning_rate(&self) -> Result<f64> {
        match (self.lr, self.algorithm) {
            (Some(lr), _) => Ok(lr),
            (None, Algorithm::LbSac) => {
                scale_learning_rate(self.base_lr, self.base_batch_size, self.batch_size)
            }
            (None, _) => Ok(self.base_lr),
        }
    }

    pub fn temperature_learning_rate(&self) -> Result<f64> {
        if self.scale_temperature_lr {
            self.learning_rate()
        } else {
            Ok(self.base_lr)
        }
    }

    pub fn target_entropy(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_dim; self.hidden_layers]
    }

    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.ensemble_size < 1 {
            p.push("ensemble_size must be at least 1".to_string());
        }
        if self.eta > 0.0 && self.ensemble_size < 2 {
            p.push(format!(
                "eta = {} needs ensemble_size >= 2, got {}",
                self.eta, self.ensemble_size
            ));
        }
        if !(self.eta >= 0.0) {
            p.push(format!("eta must be non-negative, got {}", self.eta));
        }
        if self.batch_size < 1 {
            p.push("batch_size must be at least 1".to_string());
        }
        if self.base_batch_size < 1 {
            p.push("base_batch_size must be at least 1".to_string());
        }
        if !(self.base_lr > 0.0) {
            p.push(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0) {
                p.push(format!("lr must be positive, got {lr}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            p.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            p.push(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.hidden_dim < 1 || self.hidden_layers < 1 {
            p.push("hidden_dim and hidden_layers must be at least 1".to_string());
        }
        if !(self.weight_decay >= 0.0) {
            p.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !self.initial_log_alpha.is_finite() {
            p.push("initial_log_alpha must be finite".to_string());
        }
        if self.eval_every < 1 {
            p.push("eval_every must be at least 1".to_string());
        }
        if self.eval_episodes < 1 {
            p.push("eval_episodes must be at least 1".to_string());
        }
        if self.probe_size < 1 {
            p.push("probe_size must be at least 1".to_string());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}
