use lbsac_autodiff::{Graph, NodeId, Scalar, Tensor};

use super::mlp::{BoundMlp, Init, Mlp};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `N` online critics `Q_j(s, a)` with Polyak-averaged target copies.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticEnsemble {
    online: Vec<Mlp>,
    target: Vec<Mlp>,
    action_dim: usize,
}

impl CriticEnsemble {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        size: usize,
        layer_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(size >= 1, "ensemble needs at least one critic");
        let mut widths = vec![obs_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let online: Vec<Mlp> = (0..size)
            .map(|_| Mlp::with_init(&widths, layer_norm, Init::CRITIC, rng))
            .collect();
        let target = online.clone();
        CriticEnsemble {
            online,
            target,
            action_dim,
        }
    }

    pub fn from_parts(online: Vec<Mlp>, target: Vec<Mlp>, action_dim: usize) -> Result<Self> {
        if online.is_empty() || online.len() != target.len() {
            return Err(Error::invalid("online and target ensembles differ in size"));
        }
        let widths = online[0].widths();
        let norm = online[0].has_layer_norm();
        let same = |m: &Mlp| m.widths() == widths && m.has_layer_norm() == norm;
        if !online.iter().chain(&target).all(same) || widths.last() != Some(&1) {
            return Err(Error::invalid("critics are not structurally identical"));
        }
        if widths[0] <= action_dim {
            return Err(Error::invalid("critic input narrower than the action"));
        }
        Ok(CriticEnsemble {
            online,
            target,
            action_dim,
        })
    }

    pub fn size(&self) -> usize {
        self.online.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.online[0].input_dim() - self.action_dim
    }

    pub fn layer_norm(&self) -> bool {
        self.online[0].has_layer_norm()
    }

    pub fn online(&self) -> &[Mlp] {
        &self.online
    }

    pub fn target(&self) -> &[Mlp] {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut [Mlp] {
        &mut self.online
    }

    pub fn target_mut(&mut self) -> &mut [Mlp] {
        &mut self.target
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, target: bool, trainable: bool) -> Vec<BoundMlp> {
        let nets = if target { &self.target } else { &self.online };
        nets.iter().map(|m| m.bind(g, trainable)).collect()
    }

    /// Per-critic `[batch, 1]` Q nodes on `concat(states, actions)`.
    pub fn q_nodes<T: Scalar>(
        g: &mut Graph<T>,
        critics: &[BoundMlp],
        states: NodeId,
        actions: NodeId,
    ) -> Result<Vec<NodeId>> {
        let sa = g.concat(&[states, actions])?;
        critics.iter().map(|c| c.forward(g, sa)).collect()
    }

    /// Q-values of every critic, shape `[N, batch]`.
    pub fn forward(
        &self,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        target: bool,
    ) -> Result<Tensor<f32>> {
        if actions.cols() != self.action_dim || states.cols() != self.obs_dim() {
            return Err(Error::invalid(format!(
                "ensemble expects obs {} / action {}, got {} / {}",
                self.obs_dim(),
                self.action_dim,
                states.cols(),
                actions.cols()
            )));
        }
        if actions.data().iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::invalid("actions outside [-1, 1]"));
        }
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g, target, false);
        let s = g.constant(states.clone());
        let a = g.constant(actions.clone());
        let qs = Self::q_nodes(&mut g, &bound, s, a)?;
        let batch = states.rows();
        let mut data = Vec::with_capacity(qs.len() * batch);
        for q in qs {
            data.extend_from_slice(g.evaluate(q)?.data());
        }
        Ok(Tensor::matrix(self.size(), batch, data)?)
    }

    /// `target ← (1 − τ)·target + τ·online` for every critic.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau {tau} outside [0, 1]")));
        }
        let keep = (1.0 - tau) as f32;
        let tau = tau as f32;
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            for (tp, op) in t.params_mut().into_iter().zip(o.params()) {
                for (x, &y) in tp.data_mut().iter_mut().zip(op.data()) {
                    *x = keep * *x + tau * y;
                }
            }
        }
        Ok(())
    }
}

/// Elementwise minimum over the ensemble axis of `[N, batch]` Q-values.
pub fn min_over_ensemble(q: &Tensor<f32>) -> Tensor<f32> {
    let (n, batch) = (q.rows(), q.cols());
    Tensor::from_fn(1, batch, |_, b| {
        (1..n).fold(q.get(0, b), |m, j| m.min(q.get(j, b)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0) as f32)
    }

    #[test]
    fn single_critic_matches_mlp_forward() {
        let ens = CriticEnsemble::new(3, 2, &[8, 8, 8], 1, false, &mut Rng::new(0));
        let (s, a) = (batch(6, 3, 1), batch(6, 2, 2));
        let q = ens.forward(&s, &a, false).unwrap();
        let sa = Tensor::from_fn(6, 5, |r, c| if c < 3 { s.get(r, c) } else { a.get(r, c - 3) });
        let direct = ens.online()[0].forward(&sa, "critic").unwrap();
        assert_eq!(q.data(), direct.data());
        assert_eq!(min_over_ensemble(&q).data(), q.data());
    }

    #[test]
    fn zero_final_layer_gives_bias() {
        let mut ens = CriticEnsemble::new(2, 1, &[8, 8, 8], 3, true, &mut Rng::new(1));
        for (j, c) in ens.online_mut().iter_mut().enumerate() {
            let mut params = c.params_mut();
            let n = params.len();
            params[n - 2].data_mut().fill(0.0);
            params[n - 1].data_mut()[0] = j as f32 - 0.5;
        }
        let q = ens.forward(&batch(4, 2, 3), &batch(4, 1, 4), false).unwrap();
        for j in 0..3 {
            assert!(q.row(j).iter().all(|&v| v == j as f32 - 0.5));
        }
    }

    #[test]
    fn targets_start_as_copies() {
        let ens = CriticEnsemble::new(2, 1, &[4], 2, false, &mut Rng::new(5));
        assert_eq!(ens.online(), ens.target());
    }

    #[test]
    fn polyak_edge_cases() {
        let mut ens = CriticEnsemble::new(2, 1, &[4], 2, false, &mut Rng::new(6));
        for t in ens.target_mut() {
            for p in t.params_mut() {
                p.data_mut().fill(0.0);
            }
        }
        for o in ens.online_mut() {
            for p in o.params_mut() {
                p.data_mut().fill(1.0);
            }
        }
        let before = ens.clone();
        ens.polyak_update(0.0).unwrap();
        assert_eq!(ens, before);
        ens.polyak_update(0.005).unwrap();
        assert!(ens.target()[1].params().iter().all(|p| p.data().iter().all(|&x| x == 0.005)));
        ens.polyak_update(1.0).unwrap();
        assert_eq!(ens.online(), ens.target());
        assert!(ens.polyak_update(1.5).is_err());
        assert!(ens.polyak_update(-0.1).is_err());
    }

    #[test]
    fn columnwise_min() {
        let q = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        assert_eq!(min_over_ensemble(&q).data(), &[0.0, 2.0]);
    }

    #[test]
    fn rejects_bad_actions() {
        let ens = CriticEnsemble::new(2, 1, &[4], 2, false, &mut Rng::new(7));
        let s = batch(2, 2, 8);
        assert!(ens.forward(&s, &Tensor::full(&[2, 1], 1.5), false).is_err());
        assert!(ens.forward(&s, &Tensor::zeros(&[2, 2]), false).is_err());
    }
}
