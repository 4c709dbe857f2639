use lbsac_autodiff::{Graph, NodeId, Scalar, Tensor};

use super::mlp::{BoundMlp, Init, Mlp};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `log(1 - a² + eps)` of the tanh change of variables.
pub const TANH_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// `a = tanh(μ + σ·ε)`, `ε ~ N(0, I)`, with log-probabilities.
    Stochastic,
    /// `a = tanh(μ)`, no log-probabilities.
    Deterministic,
}

/// Tanh-squashed diagonal Gaussian policy.
///
/// A single MLP emits `[μ | log σ]`, i.e. a state-dependent log-std head.
#[derive(Clone, Debug, PartialEq)]
pub struct SquashedGaussianPolicy {
    net: Mlp,
    action_dim: usize,
}

/// Graph nodes of the policy's distribution parameters.
#[derive(Clone, Debug)]
pub struct PolicyHead {
    pub mean: NodeId,
    pub log_std: NodeId,
    pub trace: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct PolicySample {
    pub actions: NodeId,
    /// `[batch, 1]`; absent in deterministic mode.
    pub log_probs: Option<NodeId>,
}

impl SquashedGaussianPolicy {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        SquashedGaussianPolicy {
            net: Mlp::with_init(&widths, false, Init::POLICY, rng),
            action_dim,
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        let out = net.output_dim();
        if out % 2 != 0 || net.has_layer_norm() {
            return Err(Error::invalid(
                "policy network needs an even output width and no layer norm",
            ));
        }
        Ok(SquashedGaussianPolicy {
            net,
            action_dim: out / 2,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn head<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundMlp,
        states: NodeId,
    ) -> Result<PolicyHead> {
        let trace = bound.forward_traced(g, states)?;
        let out = *trace.last().expect("non-empty");
        let mean = g.slice_cols(out, 0, self.action_dim)?;
        let raw = g.slice_cols(out, self.action_dim, self.action_dim)?;
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok(PolicyHead {
            mean,
            log_std,
            trace,
        })
    }

    /// Build actions (and log-probabilities when `noise` is given).
    pub fn build_sample<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundMlp,
        states: NodeId,
        noise: Option<NodeId>,
    ) -> Result<(PolicySample, PolicyHead)> {
        let head = self.head(g, bound, states)?;
        let sample = match noise {
            Some(eps) => squashed_gaussian(g, head.mean, head.log_std, eps)?,
            None => PolicySample {
                actions: g.tanh(head.mean)?,
                log_probs: None,
            },
        };
        Ok((sample, head))
    }

    /// Draw `ε ~ N(0, I)` of shape `[batch, action_dim]`.
    pub fn noise(&self, batch: usize, rng: &mut Rng) -> Tensor<f32> {
        Tensor::from_fn(batch, self.action_dim, |_, _| rng.normal() as f32)
    }

    /// Sample actions for a batch of states outside a training graph.
    pub fn sample(
        &self,
        states: &Tensor<f32>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
        let mut g = Graph::<f32>::new();
        let bound = self.net.bind(&mut g, false);
        let s = g.constant(states.clone());
        let noise = match mode {
            SampleMode::Stochastic => Some(g.constant(self.noise(states.rows(), rng))),
            SampleMode::Deterministic => None,
        };
        let (sample, head) = self.build_sample(&mut g, &bound, s, noise)?;
        bound.check_finite(&mut g, &head.trace, "policy")?;
        let actions = g.eval_cloned(sample.actions)?;
        let log_probs = match sample.log_probs {
            Some(lp) => Some(g.eval_cloned(lp)?),
            None => None,
        };
        Ok((actions, log_probs))
    }

    /// Deterministic actions `tanh(μ(s))`.
    pub fn act(&self, states: &Tensor<f32>) -> Result<Tensor<f32>> {
        // Deterministic mode never touches the generator.
        let mut unused = Rng::new(0);
        Ok(self.sample(states, SampleMode::Deterministic, &mut unused)?.0)
    }
}

/// Reparameterised tanh-Gaussian sample and its log-density.
///
/// `log π(a|s) = Σᵢ [-ε²/2 - log σ - log(2π)/2] - Σᵢ log(1 - aᵢ² + 1e-6)`.
pub fn squashed_gaussian<T: Scalar>(
    g: &mut Graph<T>,
    mean: NodeId,
    log_std: NodeId,
    noise: NodeId,
) -> Result<PolicySample> {
    let std = g.exp(log_std)?;
    let scaled = g.mul(std, noise)?;
    let pre = g.add(mean, scaled)?;
    let actions = g.tanh(pre)?;

    let eps_sq = g.square(noise)?;
    let half_sq = g.scale(eps_sq, -0.5)?;
    let gauss = g.sub(half_sq, log_std)?;
    let gauss = g.add_scalar(gauss, -0.5 * (2.0 * std::f64::consts::PI).ln())?;
    let a_sq = g.square(actions)?;
    let one_minus = g.neg(a_sq)?;
    let one_minus = g.add_scalar(one_minus, 1.0 + TANH_EPS)?;
    let correction = g.log(one_minus)?;
    let per_dim = g.sub(gauss, correction)?;
    let log_probs = g.sum_axis(per_dim, 1)?;
    Ok(PolicySample {
        actions,
        log_probs: Some(log_probs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(seed: u64) -> SquashedGaussianPolicy {
        SquashedGaussianPolicy::new(3, 2, &[16, 16, 16], &mut Rng::new(seed))
    }

    #[test]
    fn deterministic_mode_is_repeatable() {
        let p = policy(0);
        let s = Tensor::from_fn(5, 3, |r, c| (r * 3 + c) as f32 * 0.1 - 0.5);
        let a = p.act(&s).unwrap();
        let b = p.act(&s).unwrap();
        assert_eq!(a, b);
        let (_, lp) = p.sample(&s, SampleMode::Deterministic, &mut Rng::new(1)).unwrap();
        assert!(lp.is_none());
    }

    #[test]
    fn actions_strictly_inside_box() {
        let mut p = policy(3);
        // Push the mean head far out so tanh saturates in f64 terms.
        let last = p.net_mut().params_mut().len() - 1;
        p.net_mut().params_mut()[last].data_mut()[0] = 50.0;
        let s = Tensor::from_fn(64, 3, |r, _| r as f32 / 64.0);
        let (a, lp) = p.sample(&s, SampleMode::Stochastic, &mut Rng::new(2)).unwrap();
        assert!(a.data().iter().all(|x| x.abs() <= 1.0));
        assert!(lp.unwrap().is_finite());
        let a = p.act(&s).unwrap();
        assert!(a.data().iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn zero_mean_tiny_std_gives_zero_action_and_no_correction() {
        let mut g = Graph::<f64>::new();
        let mean = g.constant(Tensor::zeros(&[1, 1]));
        let log_std = g.constant(Tensor::full(&[1, 1], -40.0));
        let eps = g.constant(Tensor::full(&[1, 1], 0.7));
        let s = squashed_gaussian(&mut g, mean, log_std, eps).unwrap();
        let a = g.eval_cloned(s.actions).unwrap().item();
        assert!(a.abs() < 1e-12);
        // With a = 0 the log-prob is the plain Gaussian term.
        let lp = g.eval_cloned(s.log_probs.unwrap()).unwrap().item();
        let gauss = -0.5 * 0.49 + 40.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lp - (gauss - (1.0 + TANH_EPS).ln())).abs() < 1e-9);
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = policy(4);
        let last = p.net_mut().params_mut().len() - 1;
        // Bias of the log-std outputs.
        p.net_mut().params_mut()[last].data_mut()[2] = 100.0;
        p.net_mut().params_mut()[last].data_mut()[3] = -100.0;
        let mut g = Graph::<f32>::new();
        let bound = p.net().bind(&mut g, false);
        let s = g.constant(Tensor::zeros(&[2, 3]));
        let head = p.head(&mut g, &bound, s).unwrap();
        let ls = g.eval_cloned(head.log_std).unwrap();
        assert_eq!(ls.row(0), &[LOG_STD_MAX as f32, LOG_STD_MIN as f32]);
    }
}
