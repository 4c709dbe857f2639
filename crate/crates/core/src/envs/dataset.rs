use std::path::Path;

use lbsac_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::{Behavior, EnvId, HORIZON};
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::rng::{Rng, RNG_ALGORITHM};

pub const DATASET_MAGIC: &[u8; 4] = b"LBD1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: EnvId,
    pub behavior: Behavior,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub rows: usize,
    pub seed: u64,
    pub rng_algorithm: String,
}

impl DatasetMeta {
    pub fn new(env: EnvId, behavior: Behavior, rows: usize, seed: u64) -> Self {
        DatasetMeta {
            env,
            behavior,
            obs_dim: env.obs_dim(),
            action_dim: env.action_dim(),
            rows,
            seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
        }
    }
}

/// Columnar transitions stored in rollout order.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub observations: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_observations: Vec<f32>,
    pub dones: Vec<u8>,
}

/// A minibatch as `[B, ·]` tensors; rewards and dones are `[B, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor<f32>,
    pub actions: Tensor<f32>,
    pub rewards: Tensor<f32>,
    pub next_states: Tensor<f32>,
    pub dones: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn gather(src: &[f32], width: usize, idx: &[usize]) -> Tensor<f32> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    Tensor::matrix(idx.len(), width, out).expect("gathered rows match width")
}

impl OfflineDataset {
    pub(crate) fn with_capacity(meta: DatasetMeta, rows: usize) -> Self {
        OfflineDataset {
            observations: Vec::with_capacity(rows * meta.obs_dim),
            actions: Vec::with_capacity(rows * meta.action_dim),
            rewards: Vec::with_capacity(rows),
            next_observations: Vec::with_capacity(rows * meta.obs_dim),
            dones: Vec::with_capacity(rows),
            meta,
        }
    }

    pub(crate) fn push(&mut self, obs: &[f32], action: &[f32], reward: f32, next: &[f32], done: bool) {
        self.observations.extend_from_slice(obs);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.next_observations.extend_from_slice(next);
        self.dones.push(done as u8);
        self.meta.rows += 1;
    }

    pub fn len(&self) -> usize {
        self.meta.rows
    }

    pub fn is_empty(&self) -> bool {
        self.meta.rows == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.meta.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.meta.action_dim
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let (od, ad) = (self.obs_dim(), self.action_dim());
        Batch {
            states: gather(&self.observations, od, idx),
            actions: gather(&self.actions, ad, idx),
            rewards: gather(&self.rewards, 1, idx),
            next_states: gather(&self.next_observations, od, idx),
            dones: Tensor::from_fn(idx.len(), 1, |i, _| self.dones[idx[i]] as f32),
        }
    }

    /// `size` rows drawn uniformly with replacement.
    pub fn sample_indices(&self, size: usize, rng: &mut Rng) -> Vec<usize> {
        (0..size).map(|_| rng.below(self.len())).collect()
    }

    pub fn sample(&self, size: usize, rng: &mut Rng) -> Batch {
        self.batch(&self.sample_indices(size, rng))
    }

    /// Undiscounted returns of the complete fixed-horizon episodes.
    pub fn episode_returns(&self) -> Vec<f64> {
        self.rewards
            .chunks_exact(HORIZON)
            .map(|ep| ep.iter().map(|&r| r as f64).sum())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let mut problems = Vec::new();
        if (m.obs_dim, m.action_dim) != (m.env.obs_dim(), m.env.action_dim()) {
            problems.push(format!(
                "dims ({}, {}) do not match {} ({}, {})",
                m.obs_dim,
                m.action_dim,
                m.env,
                m.env.obs_dim(),
                m.env.action_dim()
            ));
        }
        let cols = [
            ("observations", self.observations.len(), m.obs_dim),
            ("actions", self.actions.len(), m.action_dim),
            ("rewards", self.rewards.len(), 1),
            ("next_observations", self.next_observations.len(), m.obs_dim),
            ("dones", self.dones.len(), 1),
        ];
        for (name, len, width) in cols {
            if len != m.rows * width {
                problems.push(format!("{name} holds {len} values, expected {}", m.rows * width));
            }
        }
        if self.actions.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            problems.push("actions outside [-1, 1]".into());
        }
        if self.dones.iter().any(|&d| d > 1) {
            problems.push("dones outside {0, 1}".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }

    /// `LBD1` layout (little-endian): magic `LBD1`; `u32` version; `u64`
    /// length of the UTF-8 JSON metadata that follows; then observations,
    /// actions, rewards, next observations as `f32` and dones as `u8`.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        w.u64(meta.len() as u64);
        w.bytes(&meta);
        w.f32s(&self.observations);
        w.f32s(&self.actions);
        w.f32s(&self.rewards);
        w.f32s(&self.next_observations);
        w.bytes(&self.dones);
        w.buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.magic(DATASET_MAGIC)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != DATASET_VERSION {
            return Err(r.corrupt(at, format!("unsupported version {version}")));
        }
        let at = r.offset();
        let len = r.u64("metadata length")? as usize;
        if len > r.remaining() {
            return Err(r.corrupt(at, format!("metadata length {len} exceeds file")));
        }
        let at = r.offset();
        let meta: DatasetMeta = serde_json::from_slice(r.take(len, "metadata")?)
            .map_err(|e| r.corrupt(at, format!("bad metadata: {e}")))?;
        if (meta.obs_dim, meta.action_dim) != (meta.env.obs_dim(), meta.env.action_dim()) {
            return Err(r.corrupt(at, "metadata dims do not match env"));
        }
        let need = meta.rows.checked_mul(4 * (2 * meta.obs_dim + meta.action_dim + 1) + 1);
        if need.is_none_or(|n| n != r.remaining()) {
            return Err(r.corrupt(
                r.offset(),
                format!(
                    "header declares {} rows but {} payload bytes follow",
                    meta.rows,
                    r.remaining()
                ),
            ));
        }
        let rows = meta.rows;
        let observations = r.f32s(rows * meta.obs_dim, "observations")?;
        let at = r.offset();
        let actions = r.f32s(rows * meta.action_dim, "actions")?;
        if actions.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(r.corrupt(at, "actions outside [-1, 1]"));
        }
        let rewards = r.f32s(rows, "rewards")?;
        let next_observations = r.f32s(rows * meta.obs_dim, "next_observations")?;
        let at = r.offset();
        let dones = r.take(rows, "dones")?.to_vec();
        if dones.iter().any(|&d| d > 1) {
            return Err(r.corrupt(at, "dones outside {0, 1}"));
        }
        r.finish()?;
        Ok(OfflineDataset {
            meta,
            observations,
            actions,
            rewards,
            next_observations,
            dones,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ByteWriter { buf: self.encode() }.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }
}
