use lbsac_autodiff::{Graph, NodeId, Scalar, Tensor};

use super::config::Diversity;
use crate::envs::Batch;
use crate::error::{Error, Result};
use crate::networks::{min_over_ensemble, CriticEnsemble, SampleMode, SquashedGaussianPolicy};
use crate::rng::Rng;

/// Keeps the action-gradient norm differentiable at zero.
pub const COSINE_EPS: f64 = 1e-12;

/// `y = r + γ(1 − d)(min_j Q̄_j(s′, ã′) − α·log π(ã′|s′))` with `ã′ ~ π(·|s′)`.
pub fn critic_target(
    batch: &Batch,
    policy: &SquashedGaussianPolicy,
    critics: &CriticEnsemble,
    alpha: f64,
    gamma: f64,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    let (next_actions, log_probs) = policy.sample(&batch.next_states, SampleMode::Stochastic, rng)?;
    let log_probs = log_probs.expect("stochastic samples carry log-probs");
    let q_next = min_over_ensemble(&critics.forward(&batch.next_states, &next_actions, true)?);
    let y = Tensor::from_fn(batch.len(), 1, |b, _| {
        let r = batch.rewards.get(b, 0) as f64;
        let live = 1.0 - batch.dones.get(b, 0) as f64;
        let soft = q_next.get(0, b) as f64 - alpha * log_probs.get(b, 0) as f64;
        (r + gamma * live * soft) as f32
    });
    Ok(y)
}

/// The critic loss as a graph over the online critics' parameters.
///
/// The target `y` enters as a constant, so no gradient reaches the target
/// networks or the policy.
pub struct CriticObjective<T: Scalar = f32> {
    pub graph: Graph<T>,
    pub loss: NodeId,
    pub regression: NodeId,
    pub diversity: Option<NodeId>,
    /// Trainable leaves, critic by critic in [`crate::networks::Mlp::params`] order.
    pub params: Vec<NodeId>,
    pub target: NodeId,
}

pub fn critic_objective<T: Scalar>(
    critics: &CriticEnsemble,
    states: &Tensor<f32>,
    actions: &Tensor<f32>,
    y: &Tensor<f32>,
    eta: f64,
    diversity: Diversity,
) -> Result<CriticObjective<T>> {
    let n = critics.size();
    if eta > 0.0 && n < 2 {
        return Err(Error::Config(vec![format!(
            "eta = {eta} needs ensemble_size >= 2, got {n}"
        )]));
    }
    let mut g = Graph::<T>::new();
    let bound = critics.bind(&mut g, false, true);
    let params = bound.iter().flat_map(|b| b.leaves()).collect();
    let s = g.constant(states.cast());
    let needs_action_grad = eta > 0.0 && diversity == Diversity::GradientCosine;
    let a = if needs_action_grad {
        g.variable(actions.cast())
    } else {
        g.constant(actions.cast())
    };
    let target = g.constant(y.cast());
    let qs = CriticEnsemble::q_nodes(&mut g, &bound, s, a)?;
    let q = g.concat(&qs)?;
    let err = g.sub(q, target)?;
    let sq = g.square(err)?;
    let regression = g.mean(sq)?;

    let div = if eta > 0.0 {
        Some(match diversity {
            Diversity::GradientCosine => gradient_cosine(&mut g, &qs, a)?,
            Diversity::OutputVariance => output_variance(&mut g, q)?,
        })
    } else {
        None
    };
    let loss = match div {
        Some(d) => {
            let weighted = g.scale(d, eta)?;
            g.add(regression, weighted)?
        }
        None => regression,
    };
    Ok(CriticObjective {
        graph: g,
        loss,
        regression,
        diversity: div,
        params,
        target,
    })
}

/// Batch mean of `1/(N(N−1)) Σ_{i≠j} cos(∇ₐQ_i, ∇ₐQ_j)`, using
/// `Σ_{i≠j} uᵢ·uⱼ = ‖Σ uᵢ‖² − Σ ‖uᵢ‖²` on unit gradients.
fn gradient_cosine<T: Scalar>(g: &mut Graph<T>, qs: &[NodeId], actions: NodeId) -> Result<NodeId> {
    let n = qs.len() as f64;
    let mut units = Vec::with_capacity(qs.len());
    for &q in qs {
        // Each Q_j(s_b, a_b) depends only on row b of the actions.
        let total = g.sum(q)?;
        let grad = g.grad_nodes(total, &[actions])?[0];
        let sq = g.square(grad)?;
        let norm_sq = g.sum_axis(sq, 1)?;
        let norm_sq = g.add_scalar(norm_sq, COSINE_EPS)?;
        let norm = g.sqrt(norm_sq)?;
        units.push(g.div(grad, norm)?);
    }
    let mut total = units[0];
    for &u in &units[1..] {
        total = g.add(total, u)?;
    }
    let total_sq = g.square(total)?;
    let mut pairs = g.sum_axis(total_sq, 1)?;
    for &u in &units {
        let u_sq = g.square(u)?;
        let self_dot = g.sum_axis(u_sq, 1)?;
        pairs = g.sub(pairs, self_dot)?;
    }
    let per_state = g.scale(pairs, 1.0 / (n * (n - 1.0)))?;
    Ok(g.mean(per_state)?)
}

/// Negative batch mean of the ensemble variance of `q: [B, N]`.
fn output_variance<T: Scalar>(g: &mut Graph<T>, q: NodeId) -> Result<NodeId> {
    let m = g.mean_axis(q, 1)?;
    let d = g.sub(q, m)?;
    let d2 = g.square(d)?;
    let var = g.mean_axis(d2, 1)?;
    let mean_var = g.mean(var)?;
    Ok(g.neg(mean_var)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLoss {
    pub total: f64,
    pub regression: f64,
    /// Zero when `eta` is zero.
    pub diversity: f64,
}

/// `(1/N) Σ_j mean_b (Q_j(s, a) − y)² + η·diversity(s, a)`.
pub fn critic_loss(
    batch: &Batch,
    critics: &CriticEnsemble,
    y: &Tensor<f32>,
    eta: f64,
    diversity: Diversity,
) -> Result<CriticLoss> {
    let mut obj = critic_objective::<f32>(critics, &batch.states, &batch.actions, y, eta, diversity)?;
    obj.values()
}

impl<T: Scalar> CriticObjective<T> {
    pub fn values(&mut self) -> Result<CriticLoss> {
        let total = self.graph.evaluate(self.loss)?.item().as_f64();
        let regression = self.graph.evaluate(self.regression)?.item().as_f64();
        let diversity = match self.diversity {
            Some(d) => self.graph.evaluate(d)?.item().as_f64(),
            None => 0.0,
        };
        Ok(CriticLoss {
            total,
            regression,
            diversity,
        })
    }
}

/// `mean_b(α·log π(a|s) − min_j Q_j(s, a))` with reparameterised `a`; only
/// the policy parameters are trainable.
pub struct ActorObjective<T: Scalar = f32> {
    pub graph: Graph<T>,
    pub loss: NodeId,
    pub log_probs: NodeId,
    pub actions: NodeId,
    pub params: Vec<NodeId>,
}

pub fn actor_objective<T: Scalar>(
    policy: &SquashedGaussianPolicy,
    critics: &CriticEnsemble,
    states: &Tensor<f32>,
    noise: &Tensor<f32>,
    alpha: f64,
) -> Result<ActorObjective<T>> {
    let mut g = Graph::<T>::new();
    let bound = policy.net().bind(&mut g, true);
    let params = bound.leaves();
    let frozen = critics.bind(&mut g, false, false);
    let s = g.constant(states.cast());
    let eps = g.constant(noise.cast());
    let (sample, head) = policy.build_sample(&mut g, &bound, s, Some(eps))?;
    bound.check_finite(&mut g, &head.trace, "policy")?;
    let log_probs = sample.log_probs.expect("noise given");
    let qs = CriticEnsemble::q_nodes(&mut g, &frozen, s, sample.actions)?;
    let q = g.concat(&qs)?;
    let q_min = g.min_axis(q, 1)?;
    let entropy_term = g.scale(log_probs, alpha)?;
    let per_state = g.sub(entropy_term, q_min)?;
    let loss = g.mean(per_state)?;
    Ok(ActorObjective {
        graph: g,
        loss,
        log_probs,
        actions: sample.actions,
        params,
    })
}

pub fn actor_loss(
    states: &Tensor<f32>,
    policy: &SquashedGaussianPolicy,
    critics: &CriticEnsemble,
    alpha: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let noise = policy.noise(states.rows(), rng);
    let mut obj = actor_objective::<f32>(policy, critics, states, &noise, alpha)?;
    Ok(obj.graph.evaluate(obj.loss)?.item().as_f64())
}

/// `−exp(log α)·(mean log π + H̄)` and its derivative in `log α`, which
/// coincide.
pub fn temperature_loss(log_alpha: f64, mean_log_prob: f64, target_entropy: f64) -> (f64, f64) {
    let loss = -log_alpha.exp() * (mean_log_prob + target_entropy);
    (loss, loss)
}
