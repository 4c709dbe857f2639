use std::path::Path;

use lbsac_autodiff::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::losses::{actor_objective, critic_objective, critic_target, temperature_loss, CriticLoss};
use crate::envs::{Batch, OfflineDataset};
use crate::error::{Error, Result};
use crate::networks::{load_mlp, save_mlp, CriticEnsemble, SquashedGaussianPolicy};
use crate::optimizers::{Optimizer, OptimizerConfig};
use crate::rng::Rng;

/// Losses and temperature of one gradient step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub critic_loss: f64,
    pub critic_regression: f64,
    pub diversity: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    /// Temperature used during this step.
    pub alpha: f64,
    pub mean_log_prob: f64,
}

/// Policy, critic ensemble, temperature and their optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub policy: SquashedGaussianPolicy,
    pub critics: CriticEnsemble,
    log_alpha: Tensor<f32>,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    alpha_opt: Optimizer,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct AgentState {
    step: u64,
    log_alpha: f32,
    ensemble_size: usize,
    action_dim: usize,
}

fn optimizer_config(config: &TrainConfig, lr: f64) -> OptimizerConfig {
    let mut c = OptimizerConfig::new(config.optimizer, lr);
    c.weight_decay = config.weight_decay;
    c
}

impl Agent {
    pub fn new(config: &TrainConfig, obs_dim: usize, action_dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let hidden = config.hidden();
        let policy = SquashedGaussianPolicy::new(obs_dim, action_dim, &hidden, rng);
        let critics = CriticEnsemble::new(
            obs_dim,
            action_dim,
            &hidden,
            config.ensemble_size,
            config.layer_norm,
            rng,
        );
        Self::from_networks(config, policy, critics)
    }

    pub fn from_networks(
        config: &TrainConfig,
        policy: SquashedGaussianPolicy,
        critics: CriticEnsemble,
    ) -> Result<Self> {
        let lr = config.learning_rate()?;
        let actor_opt = Optimizer::for_params(optimizer_config(config, lr), &policy.net().params());
        let critic_params: Vec<&Tensor<f32>> =
            critics.online().iter().flat_map(|m| m.params()).collect();
        let critic_opt = Optimizer::for_params(optimizer_config(config, lr), &critic_params);
        let alpha_opt = Optimizer::new(
            OptimizerConfig::adamw(config.temperature_learning_rate()?),
            [1],
        );
        Ok(Agent {
            policy,
            critics,
            log_alpha: Tensor::scalar(config.initial_log_alpha as f32),
            actor_opt,
            critic_opt,
            alpha_opt,
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha.item() as f64
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha().exp()
    }

    pub fn set_log_alpha(&mut self, log_alpha: f64) {
        self.log_alpha = Tensor::scalar(log_alpha as f32);
    }

    /// One gradient step on the critics against a fixed target `y`.
    pub fn update_critics(&mut self, config: &TrainConfig, batch: &Batch, y: &Tensor<f32>) -> Result<CriticLoss> {
        let mut obj = critic_objective::<f32>(
            &self.critics,
            &batch.states,
            &batch.actions,
            y,
            config.eta,
            config.diversity,
        )?;
        let loss = obj.values()?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                what: "critic loss",
            });
        }
        let grads = obj.graph.backward(obj.loss, &obj.params)?;
        let params = self
            .critics
            .online_mut()
            .iter_mut()
            .flat_map(|m| m.params_mut())
            .collect();
        self.critic_opt.step_tensors(params, &grads)?;
        Ok(loss)
    }

    /// One gradient step on the policy; returns the loss and the batch mean
    /// of `log π(a|s)`.
    pub fn update_actor(&mut self, states: &Tensor<f32>, noise: &Tensor<f32>) -> Result<(f64, f64)> {
        let mut obj = actor_objective::<f32>(&self.policy, &self.critics, states, noise, self.alpha())?;
        let loss = obj.graph.evaluate(obj.loss)?.item().as_f64();
        let mean_log_prob = obj.graph.evaluate(obj.log_probs)?.mean().as_f64();
        if !loss.is_finite() || !mean_log_prob.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                what: "actor loss",
            });
        }
        let grads = obj.graph.backward(obj.loss, &obj.params)?;
        self.actor_opt
            .step_tensors(self.policy.net_mut().params_mut(), &grads)?;
        Ok((loss, mean_log_prob))
    }

    /// One gradient step on `log α`; returns the temperature loss.
    pub fn update_temperature(&mut self, mean_log_prob: f64, target_entropy: f64) -> Result<f64> {
        let (loss, grad) = temperature_loss(self.log_alpha(), mean_log_prob, target_entropy);
        let grad = [Tensor::scalar(grad as f32)];
        self.alpha_opt
            .step_tensors(vec![&mut self.log_alpha], &grad)?;
        Ok(loss)
    }

    /// Critic, actor, temperature and target updates on one minibatch.
    pub fn update(&mut self, config: &TrainConfig, batch: &Batch, rng: &mut Rng) -> Result<StepReport> {
        let alpha = self.alpha();
        let y = critic_target(batch, &self.policy, &self.critics, alpha, config.gamma, rng)?;
        let critic = self.update_critics(config, batch, &y)?;
        let noise = self.policy.noise(batch.len(), rng);
        let (actor_loss, mean_log_prob) = self.update_actor(&batch.states, &noise)?;
        let target_entropy = config.target_entropy(self.policy.action_dim());
        let alpha_loss = self.update_temperature(mean_log_prob, target_entropy)?;
        self.critics.polyak_update(config.tau)?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            critic_loss: critic.total,
            critic_regression: critic.regression,
            diversity: critic.diversity,
            actor_loss,
            alpha_loss,
            alpha,
            mean_log_prob,
        })
    }

    /// Sample `batch_size` transitions uniformly with replacement and update.
    pub fn train_step(&mut self, config: &TrainConfig, dataset: &OfflineDataset, rng: &mut Rng) -> Result<StepReport> {
        if dataset.len() < config.batch_size {
            return Err(Error::Config(vec![format!(
                "batch_size {} exceeds dataset size {}",
                config.batch_size,
                dataset.len()
            )]));
        }
        let batch = dataset.sample(config.batch_size, rng);
        self.update(config, &batch, rng)
    }

    /// Writes `policy.lbn`, `critic_<j>.lbn`, `target_<j>.lbn`, the three
    /// optimizer states and `agent.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_mlp(self.policy.net(), &dir.join("policy.lbn"))?;
        for (j, (o, t)) in self.critics.online().iter().zip(self.critics.target()).enumerate() {
            save_mlp(o, &dir.join(format!("critic_{j}.lbn")))?;
            save_mlp(t, &dir.join(format!("target_{j}.lbn")))?;
        }
        self.actor_opt.save(&dir.join("actor.lbo"))?;
        self.critic_opt.save(&dir.join("critic.lbo"))?;
        self.alpha_opt.save(&dir.join("alpha.lbo"))?;
        let state = AgentState {
            step: self.step,
            log_alpha: self.log_alpha.item(),
            ensemble_size: self.critics.size(),
            action_dim: self.critics.action_dim(),
        };
        let path = dir.join("agent.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&state)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("agent.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let state: AgentState = serde_json::from_slice(&text)?;
        let policy = SquashedGaussianPolicy::from_net(load_mlp(&dir.join("policy.lbn"))?)?;
        let mut online = Vec::with_capacity(state.ensemble_size);
        let mut target = Vec::with_capacity(state.ensemble_size);
        for j in 0..state.ensemble_size {
            online.push(load_mlp(&dir.join(format!("critic_{j}.lbn")))?);
            target.push(load_mlp(&dir.join(format!("target_{j}.lbn")))?);
        }
        let critics = CriticEnsemble::from_parts(online, target, state.action_dim)?;
        let actor_opt = Optimizer::load(&dir.join("actor.lbo"))?;
        let critic_opt = Optimizer::load(&dir.join("critic.lbo"))?;
        let alpha_opt = Optimizer::load(&dir.join("alpha.lbo"))?;
        let sizes = |ps: Vec<&Tensor<f32>>| ps.iter().map(|p| p.numel()).collect::<Vec<_>>();
        let opt_sizes = |o: &Optimizer| o.first_moments().iter().map(Vec::len).collect::<Vec<_>>();
        let critic_sizes = sizes(critics.online().iter().flat_map(|m| m.params()).collect());
        if opt_sizes(&actor_opt) != sizes(policy.net().params())
            || opt_sizes(&critic_opt) != critic_sizes
            || opt_sizes(&alpha_opt) != [1]
        {
            return Err(Error::invalid(format!(
                "{}: optimizer state does not match the networks",
                dir.display()
            )));
        }
        Ok(Agent {
            policy,
            critics,
            log_alpha: Tensor::scalar(state.log_alpha),
            actor_opt,
            critic_opt,
            alpha_opt,
            step: state.step,
        })
    }
}
