//! Deterministic point-mass environments, behavior policies and score
//! normalization.

mod dataset;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use dataset::{Batch, DatasetMeta, OfflineDataset, DATASET_MAGIC, DATASET_VERSION};

pub const HORIZON: usize = 200;
pub const VELOCITY_DECAY: f64 = 0.9;
pub const ACTION_GAIN: f64 = 0.1;
pub const DT: f64 = 0.05;
pub const ACTION_COST: f64 = 0.01;
pub const INITIAL_POSITION: f64 = 0.8;
pub const INITIAL_VELOCITY_RANGE: f64 = 0.1;
pub const MEDIUM_NOISE_STD: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnvId {
    #[serde(rename = "pointmass-1d")]
    PointMass1d,
    #[serde(rename = "pointmass-2d")]
    PointMass2d,
}

impl EnvId {
    pub const ALL: [EnvId; 2] = [EnvId::PointMass1d, EnvId::PointMass2d];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PointMass1d => "pointmass-1d",
            EnvId::PointMass2d => "pointmass-2d",
        }
    }

    pub fn axes(self) -> usize {
        match self {
            EnvId::PointMass1d => 1,
            EnvId::PointMass2d => 2,
        }
    }

    pub fn obs_dim(self) -> usize {
        2 * self.axes()
    }

    pub fn action_dim(self) -> usize {
        self.axes()
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown env id {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    Random,
    Medium,
    MediumReplay,
    Expert,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [
        Behavior::Random,
        Behavior::Medium,
        Behavior::MediumReplay,
        Behavior::Expert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Random => "random",
            Behavior::Medium => "medium",
            Behavior::MediumReplay => "medium-replay",
            Behavior::Expert => "expert",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown behavior {s:?}")))
    }
}

/// Per-axis position and velocity plus the elapsed step count.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub t: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyEnv {
    id: EnvId,
}

impl ToyEnv {
    pub fn new(id: EnvId) -> Self {
        ToyEnv { id }
    }

    pub fn id(&self) -> EnvId {
        self.id
    }

    pub fn obs_dim(&self) -> usize {
        self.id.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.id.action_dim()
    }

    pub fn horizon(&self) -> usize {
        HORIZON
    }

    /// Each axis starts at ±0.8 (random sign) with velocity in ±0.1.
    pub fn reset(&self, rng: &mut Rng) -> EnvState {
        let axes = self.id.axes();
        let mut position = Vec::with_capacity(axes);
        let mut velocity = Vec::with_capacity(axes);
        for _ in 0..axes {
            let sign = if rng.below(2) == 0 { -1.0 } else { 1.0 };
            position.push(sign * INITIAL_POSITION);
            velocity.push(rng.uniform_range(-INITIAL_VELOCITY_RANGE, INITIAL_VELOCITY_RANGE));
        }
        EnvState {
            position,
            velocity,
            t: 0,
        }
    }

    /// Returns `(next_state, reward, done)`; `done` marks the horizon.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> (EnvState, f64, bool) {
        let mut next = state.clone();
        let mut reward = 0.0;
        for i in 0..self.id.axes() {
            let a = action[i].clamp(-1.0, 1.0);
            let p = state.position[i];
            let v = VELOCITY_DECAY * state.velocity[i] + ACTION_GAIN * a;
            next.velocity[i] = v;
            next.position[i] = (p + DT * v).clamp(-1.0, 1.0);
            reward -= p * p + ACTION_COST * a * a;
        }
        next.t += 1;
        let done = next.t >= HORIZON;
        (next, reward, done)
    }

    /// `[positions..., velocities...]`.
    pub fn observe(&self, state: &EnvState) -> Vec<f32> {
        state
            .position
            .iter()
            .chain(&state.velocity)
            .map(|&x| x as f32)
            .collect()
    }
}

/// Proportional controller `clip(−p − v)` per axis.
pub fn expert_action(obs: &[f32]) -> Vec<f64> {
    let axes = obs.len() / 2;
    (0..axes)
        .map(|i| (-(obs[i] as f64) - obs[axes + i] as f64).clamp(-1.0, 1.0))
        .collect()
}

fn behavior_action(policy: Behavior, obs: &[f32], rng: &mut Rng) -> Vec<f64> {
    match policy {
        Behavior::Random | Behavior::MediumReplay => {
            (0..obs.len() / 2).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
        }
        Behavior::Expert => expert_action(obs),
        Behavior::Medium => expert_action(obs)
            .into_iter()
            .map(|a| (a + MEDIUM_NOISE_STD * rng.normal()).clamp(-1.0, 1.0))
            .collect(),
    }
}

/// Policy used for episode `k` of a behavior; medium-replay alternates
/// random (even) and medium (odd) episodes.
pub fn episode_policy(behavior: Behavior, episode: usize) -> Behavior {
    match behavior {
        Behavior::MediumReplay if episode % 2 == 0 => Behavior::Random,
        Behavior::MediumReplay => Behavior::Medium,
        b => b,
    }
}

/// Undiscounted return of one episode under a behavior policy.
pub fn behavior_return(env: &ToyEnv, policy: Behavior, rng: &mut Rng) -> f64 {
    let mut state = env.reset(rng);
    let mut total = 0.0;
    loop {
        let action = behavior_action(policy, &env.observe(&state), rng);
        let (next, r, done) = env.step(&state, &action);
        total += r;
        state = next;
        if done {
            return total;
        }
    }
}

/// Runs `episodes` episodes in lockstep. `act` maps a `[episodes, obs]`
/// row-major observation block to a `[episodes, action]` block.
pub fn batched_returns<E>(
    env: &ToyEnv,
    episodes: usize,
    rng: &mut Rng,
    mut act: impl FnMut(&[f32]) -> std::result::Result<Vec<f32>, E>,
) -> std::result::Result<Vec<f64>, E> {
    let mut states: Vec<EnvState> = (0..episodes).map(|_| env.reset(rng)).collect();
    let mut returns = vec![0.0; episodes];
    let adim = env.action_dim();
    for _ in 0..HORIZON {
        let obs: Vec<f32> = states.iter().flat_map(|s| env.observe(s)).collect();
        let actions = act(&obs)?;
        for (k, state) in states.iter_mut().enumerate() {
            let a: Vec<f64> = actions[k * adim..(k + 1) * adim]
                .iter()
                .map(|&x| x as f64)
                .collect();
            let (next, r, _) = env.step(state, &a);
            returns[k] += r;
            *state = next;
        }
    }
    Ok(returns)
}

/// Rolls out episodes of `behavior` until `size` transitions are stored.
pub fn generate_dataset(env: EnvId, behavior: Behavior, size: usize, seed: u64) -> Result<OfflineDataset> {
    if size == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let toy = ToyEnv::new(env);
    let mut rng = Rng::new(seed);
    let (od, ad) = (env.obs_dim(), env.action_dim());
    let mut data = OfflineDataset::with_capacity(
        DatasetMeta::new(env, behavior, 0, seed),
        size,
    );
    let mut episode = 0;
    while data.len() < size {
        let policy = episode_policy(behavior, episode);
        let mut state = toy.reset(&mut rng);
        loop {
            let obs = toy.observe(&state);
            let action = behavior_action(policy, &obs, &mut rng);
            let (next, reward, done) = toy.step(&state, &action);
            let action32: Vec<f32> = action.iter().map(|&a| a as f32).collect();
            debug_assert_eq!((obs.len(), action32.len()), (od, ad));
            data.push(&obs, &action32, reward as f32, &toy.observe(&next), false);
            state = next;
            if done || data.len() == size {
                break;
            }
        }
        episode += 1;
    }
    Ok(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReference {
    pub random_return: f64,
    pub expert_return: f64,
    pub episodes: usize,
    pub seed: u64,
}

pub const REFERENCE_EPISODES: usize = 100;
pub const REFERENCE_SEED: u64 = 0;

const REGISTRY: &str = include_str!("../../data/score_refs.json");

impl ScoreReference {
    /// Mean returns of the random and expert behaviors over seeded episodes.
    pub fn compute(env: EnvId, episodes: usize, seed: u64) -> Self {
        let toy = ToyEnv::new(env);
        let mean = |policy: Behavior, stream: u64| {
            let mut rng = Rng::stream(seed, stream);
            (0..episodes)
                .map(|_| behavior_return(&toy, policy, &mut rng))
                .sum::<f64>()
                / episodes as f64
        };
        ScoreReference {
            random_return: mean(Behavior::Random, 0),
            expert_return: mean(Behavior::Expert, 1),
            episodes,
            seed,
        }
    }

    pub fn registry() -> BTreeMap<EnvId, ScoreReference> {
        serde_json::from_str(REGISTRY).expect("embedded score registry is valid")
    }

    pub fn for_env(env: EnvId) -> Self {
        Self::registry()[&env]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.expert_return > self.random_return) {
            return Err(Error::invalid(format!(
                "score reference needs expert_return > random_return, got {} and {}",
                self.expert_return, self.random_return
            )));
        }
        Ok(())
    }
}

/// `100·(raw − random) / (expert − random)`.
pub fn normalized_score(raw_return: f64, reference: &ScoreReference) -> Result<f64> {
    let span = reference.expert_return - reference.random_return;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::invalid("score reference has equal random and expert returns"));
    }
    Ok(100.0 * (raw_return - reference.random_return) / span)
}
