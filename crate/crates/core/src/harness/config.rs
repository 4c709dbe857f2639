use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::algorithms::{Algorithm, Diversity, TrainConfig};
use crate::envs::{EnvId, OfflineDataset};
use crate::error::{Error, Result};
use crate::optimizers::OptimizerKind;

pub const DEFAULT_SEEDS: [u64; 4] = [0, 1, 2, 3];

/// One configuration trained over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Experiment {
    pub name: String,
    pub env: EnvId,
    pub dataset: PathBuf,
    pub seeds: Vec<u64>,
    /// `seed` is overwritten per run.
    pub config: TrainConfig,
    /// Normalized score the convergence detector aims for; the run's own
    /// final score when absent.
    pub convergence_target: Option<f64>,
    /// Extra checkpoints every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// SHA-256 of the dataset file, hex.
    pub dataset_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub output_dir: PathBuf,
    pub experiments: Vec<Experiment>,
}

impl Experiment {
    /// Hash of everything that determines a run except its seed.
    pub fn config_hash(&self) -> String {
        let mut config = self.config.clone();
        config.seed = 0;
        #[derive(Serialize)]
        struct Keyed<'a> {
            name: &'a str,
            env: EnvId,
            dataset_sha256: &'a str,
            config: &'a TrainConfig,
            convergence_target: Option<f64>,
        }
        let keyed = Keyed {
            name: &self.name,
            env: self.env,
            dataset_sha256: &self.dataset_sha256,
            config: &config,
            convergence_target: self.convergence_target,
        };
        let bytes = serde_json::to_vec(&keyed).expect("config serializes");
        hex(&Sha256::digest(bytes))[..16].to_string()
    }

    pub fn run_config(&self, seed: u64) -> TrainConfig {
        let mut c = self.config.clone();
        c.seed = seed;
        c
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const TOP_KEYS: [&str; 4] = ["output_dir", "eval_every", "eval_episodes", "experiment"];

const EXPERIMENT_KEYS: [&str; 28] = [
    "name",
    "env",
    "dataset",
    "seeds",
    "convergence_target",
    "checkpoint_every",
    "algorithm",
    "ensemble_size",
    "batch_size",
    "base_batch_size",
    "base_lr",
    "lr",
    "gamma",
    "tau",
    "eta",
    "diversity",
    "target_entropy",
    "layer_norm",
    "hidden_dim",
    "hidden_layers",
    "optimizer",
    "weight_decay",
    "scale_temperature_lr",
    "initial_log_alpha",
    "max_steps",
    "eval_every",
    "eval_episodes",
    "probe_size",
];

pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

/// Relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentSpec> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut p = Problems::default();
    for key in table.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            p.push(format!("unknown key {key:?}"));
        }
    }
    let output_dir = p
        .string(&table, "output_dir", "")
        .map(|s| base_dir.join(s))
        .unwrap_or_else(|| base_dir.join("runs"));
    let eval_every = p.uint(&table, "eval_every", "");
    let eval_episodes = p.uint(&table, "eval_episodes", "");

    let entries = match table.get("experiment") {
        Some(Value::Array(a)) => a.clone(),
        Some(_) => {
            p.push("\"experiment\" must be an array of tables ([[experiment]])".into());
            Vec::new()
        }
        None => {
            p.push("no [[experiment]] entries".into());
            Vec::new()
        }
    };

    let mut experiments = Vec::new();
    let mut names = BTreeSet::new();
    for (i, entry) in entries.iter().enumerate() {
        let Value::Table(t) = entry else {
            p.push(format!("experiment {i} is not a table"));
            continue;
        };
        let label = match t.get("name") {
            Some(Value::String(s)) => format!("experiment {s:?}"),
            _ => format!("experiment {i}"),
        };
        if let Some(e) = parse_experiment(t, &label, base_dir, eval_every, eval_episodes, &mut p) {
            if !names.insert(e.name.clone()) {
                p.push(format!("{label}: duplicate name"));
            }
            experiments.push(e);
        }
    }
    p.finish(ExperimentSpec {
        output_dir,
        experiments,
    })
}

fn parse_experiment(
    t: &Table,
    label: &str,
    base_dir: &Path,
    eval_every: Option<u64>,
    eval_episodes: Option<u64>,
    p: &mut Problems,
) -> Option<Experiment> {
    let before = p.0.len();
    for key in t.keys() {
        if !EXPERIMENT_KEYS.contains(&key.as_str()) {
            p.push(format!("{label}: unknown key {key:?}"));
        }
    }
    let name = p.string(t, "name", label);
    if name.is_none() {
        p.push(format!("{label}: missing \"name\""));
    }
    if let Some(n) = &name {
        let ok = !n.is_empty()
            && n.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            && !n.starts_with('.');
        if !ok {
            p.push(format!("{label}: name must be non-empty [A-Za-z0-9._-] and not start with '.'"));
        }
    }
    let env = p.parsed::<EnvId>(t, "env", label);
    let algorithm = p.parsed::<Algorithm>(t, "algorithm", label);
    let dataset = p.string(t, "dataset", label).map(|s| base_dir.join(s));
    for (key, value) in [("env", env.is_some()), ("algorithm", algorithm.is_some()), ("dataset", dataset.is_some())] {
        if !value && !t.contains_key(key) {
            p.push(format!("{label}: missing {key:?}"));
        }
    }

    let mut config = TrainConfig::new(algorithm.unwrap_or(Algorithm::SacN));
    if let Some(v) = eval_every {
        config.eval_every = v;
    }
    if let Some(v) = eval_episodes {
        config.eval_episodes = v as usize;
    }
    macro_rules! set {
        (uint $key:literal => $field:ident as $ty:ty) => {
            if let Some(v) = p.uint(t, $key, label) {
                config.$field = v as $ty;
            }
        };
        (float $key:literal => $field:ident) => {
            if let Some(v) = p.float(t, $key, label) {
                config.$field = v;
            }
        };
        (bool $key:literal => $field:ident) => {
            if let Some(v) = p.boolean(t, $key, label) {
                config.$field = v;
            }
        };
    }
    set!(uint "ensemble_size" => ensemble_size as usize);
    set!(uint "batch_size" => batch_size as usize);
    set!(uint "base_batch_size" => base_batch_size as usize);
    set!(uint "hidden_dim" => hidden_dim as usize);
    set!(uint "hidden_layers" => hidden_layers as usize);
    set!(uint "max_steps" => max_steps as u64);
    set!(uint "eval_every" => eval_every as u64);
    set!(uint "eval_episodes" => eval_episodes as usize);
    set!(uint "probe_size" => probe_size as usize);
    set!(float "base_lr" => base_lr);
    set!(float "gamma" => gamma);
    set!(float "tau" => tau);
    set!(float "eta" => eta);
    set!(float "weight_decay" => weight_decay);
    set!(float "initial_log_alpha" => initial_log_alpha);
    set!(bool "layer_norm" => layer_norm);
    set!(bool "scale_temperature_lr" => scale_temperature_lr);
    if let Some(v) = p.float(t, "lr", label) {
        config.lr = Some(v);
    }
    if let Some(v) = p.float(t, "target_entropy", label) {
        config.target_entropy = Some(v);
    }
    if let Some(s) = p.string(t, "diversity", label) {
        match s.as_str() {
            "gradient-cosine" => config.diversity = Diversity::GradientCosine,
            "output-variance" => config.diversity = Diversity::OutputVariance,
            _ => p.push(format!("{label}: unknown diversity {s:?}")),
        }
    }
    if let Some(s) = p.string(t, "optimizer", label) {
        match s.as_str() {
            "adamw" => config.optimizer = OptimizerKind::AdamW,
            "lars" => config.optimizer = OptimizerKind::Lars,
            "lamb" => config.optimizer = OptimizerKind::Lamb,
            _ => p.push(format!("{label}: unknown optimizer {s:?}")),
        }
    }
    for problem in config.problems() {
        p.push(format!("{label}: {problem}"));
    }

    let seeds = match t.get("seeds") {
        None => DEFAULT_SEEDS.to_vec(),
        Some(Value::Array(a)) => {
            let seeds: Vec<u64> = a
                .iter()
                .filter_map(|v| v.as_integer().filter(|&i| i >= 0).map(|i| i as u64))
                .collect();
            if seeds.len() != a.len() || seeds.is_empty() {
                p.push(format!("{label}: \"seeds\" must be a non-empty array of non-negative integers"));
            }
            let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
            if distinct.len() != seeds.len() {
                p.push(format!("{label}: seeds must be distinct"));
            }
            seeds
        }
        Some(_) => {
            p.push(format!("{label}: \"seeds\" must be an array"));
            Vec::new()
        }
    };
    let convergence_target = p.float(t, "convergence_target", label);
    let checkpoint_every = p.uint(t, "checkpoint_every", label).unwrap_or(0);

    let mut dataset_sha256 = String::new();
    if let (Some(path), Some(env)) = (&dataset, env) {
        match std::fs::read(path) {
            Err(e) => p.push(format!("{label}: dataset {}: {e}", path.display())),
            Ok(bytes) => {
                dataset_sha256 = hex(&Sha256::digest(&bytes));
                match OfflineDataset::decode(&bytes, path) {
                    Err(e) => p.push(format!("{label}: {e}")),
                    Ok(d) => {
                        if d.meta.env != env || d.obs_dim() != env.obs_dim() || d.action_dim() != env.action_dim() {
                            p.push(format!(
                                "{label}: dataset is for {} ({}-d observations, {}-d actions), config names {env}",
                                d.meta.env,
                                d.obs_dim(),
                                d.action_dim()
                            ));
                        }
                        if config.batch_size > d.len() {
                            p.push(format!(
                                "{label}: batch_size {} exceeds dataset size {}",
                                config.batch_size,
                                d.len()
                            ));
                        }
                        if config.probe_size > d.len() {
                            p.push(format!(
                                "{label}: probe_size {} exceeds dataset size {}",
                                config.probe_size,
                                d.len()
                            ));
                        }
                    }
                }
            }
        }
    }

    if p.0.len() > before {
        return None;
    }
    Some(Experiment {
        name: name?,
        env: env?,
        dataset: dataset?,
        seeds,
        config,
        convergence_target,
        checkpoint_every,
        dataset_sha256,
    })
}

#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn push(&mut self, s: String) {
        self.0.push(s);
    }

    fn finish<T>(self, value: T) -> Result<T> {
        if self.0.is_empty() {
            Ok(value)
        } else {
            Err(Error::Config(self.0))
        }
    }

    fn where_(label: &str, key: &str) -> String {
        if label.is_empty() {
            format!("{key:?}")
        } else {
            format!("{label}: {key:?}")
        }
    }

    fn string(&mut self, t: &Table, key: &str, label: &str) -> Option<String> {
        match t.get(key)? {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.push(format!("{} must be a string", Self::where_(label, key)));
                None
            }
        }
    }

    fn uint(&mut self, t: &Table, key: &str, label: &str) -> Option<u64> {
        match t.get(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.push(format!("{} must be a non-negative integer", Self::where_(label, key)));
                None
            }
        }
    }

    fn float(&mut self, t: &Table, key: &str, label: &str) -> Option<f64> {
        match t.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.push(format!("{} must be a number", Self::where_(label, key)));
                None
            }
        }
    }

    fn boolean(&mut self, t: &Table, key: &str, label: &str) -> Option<bool> {
        match t.get(key)? {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.push(format!("{} must be a boolean", Self::where_(label, key)));
                None
            }
        }
    }

    fn parsed<T: std::str::FromStr<Err = Error>>(&mut self, t: &Table, key: &str, label: &str) -> Option<T> {
        let s = self.string(t, key, label)?;
        match s.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(format!("{label}: {e}"));
                None
            }
        }
    }
}
