//! Parameter update rules and learning-rate scaling.
//!
//! Every parameter tensor (each weight matrix and each bias vector) is its
//! own "layer" for the LARS and LAMB trust ratios.

use std::path::Path;

use lbsac_autodiff::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const OPTIMIZER_MAGIC: &[u8; 4] = b"LBO1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Lars,
    Lamb,
}

impl OptimizerKind {
    fn code(self) -> u32 {
        match self {
            OptimizerKind::AdamW => 0,
            OptimizerKind::Lars => 1,
            OptimizerKind::Lamb => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(OptimizerKind::AdamW),
            1 => Some(OptimizerKind::Lars),
            2 => Some(OptimizerKind::Lamb),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// LARS heavy-ball momentum.
    pub momentum: f64,
    /// LARS trust coefficient η in `η‖p‖ / (‖g‖ + wd‖p‖ + ε)`.
    pub trust_coefficient: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerConfig {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            momentum: 0.9,
            trust_coefficient: 1.0,
        }
    }

    pub fn adamw(lr: f64) -> Self {
        Self::new(OptimizerKind::AdamW, lr)
    }
}

/// Square-root scaling: `lr = base_lr · sqrt(batch / base_batch)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrScalingRule {
    pub base_learning_rate: f64,
    pub base_batch_size: usize,
    pub batch_size: usize,
}

impl LrScalingRule {
    pub fn new(base_learning_rate: f64, base_batch_size: usize, batch_size: usize) -> Self {
        LrScalingRule {
            base_learning_rate,
            base_batch_size,
            batch_size,
        }
    }

    pub fn learning_rate(&self) -> Result<f64> {
        scale_learning_rate(self.base_learning_rate, self.base_batch_size, self.batch_size)
    }
}

pub fn scale_learning_rate(base_lr: f64, base_batch: usize, batch: usize) -> Result<f64> {
    if !(base_lr > 0.0) || base_batch == 0 || batch == 0 {
        return Err(Error::invalid(format!(
            "learning-rate scaling needs positive inputs, got lr {base_lr}, base batch {base_batch}, batch {batch}"
        )));
    }
    Ok(base_lr * (batch as f64 / base_batch as f64).sqrt())
}

fn norm<T: Scalar>(xs: &[T]) -> f64 {
    xs.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// `coef·‖p‖ / (‖g‖ + wd·‖p‖ + ε)`, or 1 when either norm term vanishes.
pub fn lars_trust_ratio(param_norm: f64, grad_norm: f64, wd: f64, eps: f64, coef: f64) -> f64 {
    let denom = grad_norm + wd * param_norm + eps;
    if param_norm == 0.0 || denom == 0.0 {
        1.0
    } else {
        coef * param_norm / denom
    }
}

/// `‖p‖ / ‖u‖`, or 1 when either norm vanishes.
pub fn lamb_trust_ratio(param_norm: f64, update_norm: f64) -> f64 {
    if param_norm == 0.0 || update_norm == 0.0 {
        1.0
    } else {
        param_norm / update_norm
    }
}

/// Optimizer state: per-parameter moment buffers and a step counter.
///
/// For LARS the first buffer is the momentum and the second is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T: Scalar = f32> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Optimizer {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(config: OptimizerConfig, params: &[&Tensor<T>]) -> Self {
        Self::new(config, params.iter().map(|p| p.numel()))
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.first
    }

    /// Apply one update. Gradients are validated before anything changes.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != p.len() {
                return Err(Error::invalid(format!("parameter {i}: size mismatch")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(i));
            }
        }
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            match self.config.kind {
                OptimizerKind::AdamW => self.adamw(i, p, g),
                OptimizerKind::Lars => self.lars(i, p, g),
                OptimizerKind::Lamb => self.lamb(i, p, g),
            }
        }
        Ok(())
    }

    /// Tensor-level convenience over [`Optimizer::step`].
    pub fn step_tensors(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        let mut slices: Vec<&mut [T]> = params.into_iter().map(|p| p.data_mut()).collect();
        let grads: Vec<&[T]> = grads.iter().map(|g| g.data()).collect();
        self.step(&mut slices, &grads)
    }

    fn adam_direction(&mut self, i: usize, g: &[T]) -> Vec<T> {
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one, eps) = (T::one(), T::from_f64(c.eps));
        let t = self.step as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let (m, v) = (&mut self.first[i], &mut self.second[i]);
        g.iter()
            .zip(m.iter_mut().zip(v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                (*m / bc1) / ((*v / bc2).sqrt() + eps)
            })
            .collect()
    }

    /// `p ← p − lr·(m̂ / (√v̂ + ε) + wd·p)`.
    fn adamw(&mut self, i: usize, p: &mut [T], g: &[T]) {
        let dir = self.adam_direction(i, g);
        let lr = T::from_f64(self.config.lr);
        let wd = T::from_f64(self.config.weight_decay);
        for (p, d) in p.iter_mut().zip(dir) {
            *p = *p - lr * (d + wd * *p);
        }
    }

    /// Momentum SGD on `g + wd·p`, rescaled per layer by the LARS trust ratio.
    fn lars(&mut self, i: usize, p: &mut [T], g: &[T]) {
        if p.is_empty() {
            return;
        }
        let c = self.config;
        let ratio = lars_trust_ratio(norm(p), norm(g), c.weight_decay, c.eps, c.trust_coefficient);
        let (ratio, wd) = (T::from_f64(ratio), T::from_f64(c.weight_decay));
        let (mu, lr) = (T::from_f64(c.momentum), T::from_f64(c.lr));
        for ((p, &g), buf) in p.iter_mut().zip(g).zip(self.first[i].iter_mut()) {
            *buf = mu * *buf + ratio * (g + wd * *p);
            *p = *p - lr * *buf;
        }
    }

    /// Adam direction plus decay, rescaled per layer by `‖p‖ / ‖update‖`.
    fn lamb(&mut self, i: usize, p: &mut [T], g: &[T]) {
        if p.is_empty() {
            return;
        }
        let wd = T::from_f64(self.config.weight_decay);
        let update: Vec<T> = self
            .adam_direction(i, g)
            .into_iter()
            .zip(p.iter())
            .map(|(d, &p)| d + wd * p)
            .collect();
        let ratio = T::from_f64(lamb_trust_ratio(norm(p), norm(&update)));
        let lr = T::from_f64(self.config.lr);
        for (p, u) in p.iter_mut().zip(update) {
            *p = *p - lr * ratio * u;
        }
    }
}

impl Optimizer<f32> {
    /// `LBO1` layout (little-endian): magic; `u32` kind (0 AdamW, 1 LARS,
    /// 2 LAMB); `u64` step; `f64` lr, β1, β2, ε, weight decay, momentum,
    /// trust coefficient; `u32` tensor count `K`; `K` `u32` lengths; the
    /// `K` first-moment `f32` blobs; the `K` second-moment blobs.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(OPTIMIZER_MAGIC);
        let c = &self.config;
        w.u32(c.kind.code());
        w.u64(self.step);
        for v in [
            c.lr,
            c.beta1,
            c.beta2,
            c.eps,
            c.weight_decay,
            c.momentum,
            c.trust_coefficient,
        ] {
            w.f64(v);
        }
        w.u32(self.first.len() as u32);
        for b in &self.first {
            w.u32(b.len() as u32);
        }
        for b in self.first.iter().chain(&self.second) {
            w.f32s(b);
        }
        w.buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.magic(OPTIMIZER_MAGIC)?;
        let kind_at = r.offset();
        let kind = OptimizerKind::from_code(r.u32("kind")?)
            .ok_or_else(|| r.corrupt(kind_at, "unknown optimizer kind"))?;
        let step = r.u64("step")?;
        let mut hp = [0.0; 7];
        for v in &mut hp {
            *v = r.f64("hyperparameter")?;
        }
        let config = OptimizerConfig {
            kind,
            lr: hp[0],
            beta1: hp[1],
            beta2: hp[2],
            eps: hp[3],
            weight_decay: hp[4],
            momentum: hp[5],
            trust_coefficient: hp[6],
        };
        let count_at = r.offset();
        let count = r.u32("tensor count")? as usize;
        if count > r.remaining() / 4 {
            return Err(r.corrupt(count_at, format!("implausible tensor count {count}")));
        }
        let lens = (0..count)
            .map(|_| r.u32("length").map(|n| n as usize))
            .collect::<Result<Vec<_>>>()?;
        let first = lens
            .iter()
            .map(|&n| r.f32s(n, "first moment"))
            .collect::<Result<Vec<_>>>()?;
        let second = lens
            .iter()
            .map(|&n| r.f32s(n, "second moment"))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Optimizer {
            config,
            step,
            first,
            second,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ByteWriter { buf: self.encode() }.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }
}
