use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use lbsac_autodiff::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, ExperimentSpec};
use crate::algorithms::{Agent, Algorithm, StepReport, TrainConfig};
use crate::diagnostics::{
    action_mse, detect_convergence, std_ratio, ConvergenceCriterion, CsvHeader, DiagnosticsRecord,
    DiagnosticsWriter,
};
use crate::envs::{batched_returns, normalized_score, EnvId, OfflineDataset, ScoreReference, ToyEnv};
use crate::error::{Error, Result};
use crate::rng::{Rng, RngState};

/// Independent generator streams of one run, all keyed by the run seed.
pub const TRAIN_STREAM: u64 = 0;
pub const DIAGNOSTICS_STREAM: u64 = 1;
pub const EVAL_STREAM: u64 = 2;

pub const THREADS_ENV: &str = "LBSAC_THREADS";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Concurrent runs; defaults to the available cores.
    pub jobs: Option<usize>,
    /// Continue runs from their checkpoints instead of starting over.
    pub resume: bool,
    /// Only train these seeds (each must be listed in the experiment).
    pub seeds: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed { step: u64, error: String },
}

/// Written to `summary.json` in each run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub env: EnvId,
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub status: RunStatus,
    pub steps: u64,
    pub evaluations: usize,
    pub final_score: Option<f64>,
    pub max_score: Option<f64>,
    pub wall_clock_s: f64,
    pub convergence_target: Option<f64>,
    pub convergence_step: Option<u64>,
    pub convergence_wall_clock_s: Option<f64>,
    pub config: TrainConfig,
}

impl RunSummary {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

#[derive(Serialize, Deserialize)]
struct Progress {
    step: u64,
    wall_clock_s: f64,
    train_rng: RngState,
    diagnostics_rng: RngState,
    last: Option<StepReport>,
}

pub fn run_dir(output_dir: &Path, name: &str, seed: u64) -> PathBuf {
    output_dir.join(name).join(format!("seed-{seed}"))
}

/// `--jobs` if given, else the available cores, capped by `LBSAC_THREADS`.
pub fn resolve_jobs(requested: Option<usize>) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let jobs = requested.unwrap_or(cores).max(1);
    cap.map_or(jobs, |c| jobs.min(c))
}

/// Train every (experiment, seed) pair; a failing run is recorded in its
/// summary and does not stop the others.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<RunSummary>> {
    let mut tasks = Vec::new();
    for exp in &spec.experiments {
        let seeds = match &opts.seeds {
            None => exp.seeds.clone(),
            Some(only) => {
                if let Some(s) = only.iter().find(|s| !exp.seeds.contains(s)) {
                    return Err(Error::Config(vec![format!(
                        "experiment {:?} does not list seed {s}",
                        exp.name
                    )]));
                }
                only.clone()
            }
        };
        let dataset = Arc::new(OfflineDataset::load(&exp.dataset)?);
        for seed in seeds {
            tasks.push((exp, seed, Arc::clone(&dataset)));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_jobs(opts.jobs))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let summaries = pool.install(|| {
        tasks
            .par_iter()
            .map(|(exp, seed, data)| {
                let dir = run_dir(&spec.output_dir, &exp.name, *seed);
                train_run(exp, *seed, data, &dir, opts.resume)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summaries)
}

struct Evaluator<'a> {
    env: ToyEnv,
    reference: ScoreReference,
    data: &'a OfflineDataset,
    probe_size: usize,
    episodes: usize,
    seed: u64,
}

impl<'a> Evaluator<'a> {
    fn new(exp: &Experiment, data: &'a OfflineDataset, config: &TrainConfig) -> Self {
        Evaluator {
            env: ToyEnv::new(exp.env),
            reference: ScoreReference::for_env(exp.env),
            data,
            probe_size: config.probe_size,
            episodes: config.eval_episodes,
            seed: config.seed,
        }
    }

    fn evaluate(
        &self,
        agent: &Agent,
        diag_rng: &mut Rng,
        step: u64,
        wall_clock_s: f64,
        last: Option<&StepReport>,
    ) -> Result<DiagnosticsRecord> {
        // A fresh probe batch every evaluation.
        let probe = self.data.sample(self.probe_size, diag_rng);
        let ratio = std_ratio(&agent.critics, &probe.states, &probe.actions, diag_rng)?;
        let mse = action_mse(&agent.policy, &probe.states, &probe.actions)?;
        // Every evaluation replays the same initial states.
        let mut rng = Rng::stream(self.seed, EVAL_STREAM);
        let obs_dim = self.env.obs_dim();
        let returns = batched_returns(&self.env, self.episodes, &mut rng, |obs| {
            let states = Tensor::matrix(obs.len() / obs_dim, obs_dim, obs.to_vec())?;
            Ok::<_, Error>(agent.policy.act(&states)?.data().to_vec())
        })?;
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        Ok(DiagnosticsRecord {
            step,
            wall_clock_s,
            std_ratio: ratio,
            action_mse: mse,
            mean_return,
            normalized_score: normalized_score(mean_return, &self.reference)?,
            alpha: agent.alpha(),
            critic_loss: last.map_or(f64::NAN, |r| r.critic_loss),
            actor_loss: last.map_or(f64::NAN, |r| r.actor_loss),
        })
    }
}

/// Train one seed into `dir`: `diagnostics.csv`, `summary.json` and
/// `checkpoint/`.
pub fn train_run(exp: &Experiment, seed: u64, data: &OfflineDataset, dir: &Path, resume: bool) -> Result<RunSummary> {
    let config = exp.run_config(seed);
    let config_hash = exp.config_hash();
    let csv = dir.join("diagnostics.csv");
    let checkpoint = dir.join("checkpoint");
    let progress_path = checkpoint.join("progress.json");
    let header = CsvHeader {
        config_hash: config_hash.clone(),
        run: exp.name.clone(),
        seed,
    };
    let eval = Evaluator::new(exp, data, &config);

    let mut records = Vec::new();
    let mut failure = None;
    let (mut agent, mut train_rng, mut diag_rng, mut elapsed, mut last, mut writer);
    if resume && progress_path.exists() && csv.exists() {
        let text = std::fs::read(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
        let progress: Progress = serde_json::from_slice(&text)?;
        let (found, previous) = crate::diagnostics::read_diagnostics_csv(&csv)?;
        if found.config_hash != config_hash || found.seed != seed {
            return Err(Error::invalid(format!(
                "{}: belongs to config {} seed {}, not {config_hash} seed {seed}",
                csv.display(),
                found.config_hash,
                found.seed
            )));
        }
        agent = Agent::load(&checkpoint)?;
        train_rng = Rng::from_state(progress.train_rng);
        diag_rng = Rng::from_state(progress.diagnostics_rng);
        elapsed = progress.wall_clock_s;
        last = progress.last;
        records = previous.into_iter().filter(|r| r.step <= progress.step).collect();
        writer = DiagnosticsWriter::resume(&csv, progress.step)?;
    } else {
        if checkpoint.exists() {
            std::fs::remove_dir_all(&checkpoint).map_err(|e| Error::io(&checkpoint, e))?;
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        train_rng = Rng::stream(seed, TRAIN_STREAM);
        diag_rng = Rng::stream(seed, DIAGNOSTICS_STREAM);
        agent = Agent::new(&config, exp.env.obs_dim(), exp.env.action_dim(), &mut train_rng)?;
        elapsed = 0.0;
        last = None;
        writer = DiagnosticsWriter::create(&csv, &header)?;
        match eval.evaluate(&agent, &mut diag_rng, 0, 0.0, None) {
            Ok(r) => {
                writer.append(&r)?;
                records.push(r);
            }
            Err(e) => failure = Some((0, e.to_string())),
        }
    }

    let save = |agent: &Agent, train_rng: &Rng, diag_rng: &Rng, elapsed: f64, last: Option<StepReport>| -> Result<()> {
        agent.save(&checkpoint)?;
        let progress = Progress {
            step: agent.step(),
            wall_clock_s: elapsed,
            train_rng: train_rng.state(),
            diagnostics_rng: diag_rng.state(),
            last,
        };
        std::fs::write(&progress_path, serde_json::to_vec_pretty(&progress)?)
            .map_err(|e| Error::io(&progress_path, e))
    };

    while failure.is_none() && agent.step() < config.max_steps {
        let started = Instant::now();
        match agent.train_step(&config, data, &mut train_rng) {
            Ok(report) => last = Some(report),
            Err(e) => {
                failure = Some((agent.step() + 1, e.to_string()));
                break;
            }
        }
        elapsed += started.elapsed().as_secs_f64();
        let step = agent.step();
        if step % config.eval_every == 0 || step == config.max_steps {
            match eval.evaluate(&agent, &mut diag_rng, step, elapsed, last.as_ref()) {
                Ok(r) => {
                    writer.append(&r)?;
                    records.push(r);
                }
                Err(e) => failure = Some((step, e.to_string())),
            }
        }
        if exp.checkpoint_every > 0 && step % exp.checkpoint_every == 0 && failure.is_none() {
            save(&agent, &train_rng, &diag_rng, elapsed, last)?;
        }
    }
    if failure.is_none() {
        save(&agent, &train_rng, &diag_rng, elapsed, last)?;
    }

    let status = match failure {
        None => RunStatus::Completed,
        Some((step, error)) => RunStatus::Failed { step, error },
    };
    let final_score = records.last().map(|r| r.normalized_score);
    let max_score = records
        .iter()
        .map(|r| r.normalized_score)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))));
    let target = exp.convergence_target.or(final_score);
    let convergence = match target {
        Some(t) if !records.is_empty() => Some(detect_convergence(&records, &ConvergenceCriterion::new(t))?),
        _ => None,
    };
    let summary = RunSummary {
        name: exp.name.clone(),
        seed,
        config_hash,
        env: exp.env,
        algorithm: config.algorithm,
        status,
        steps: agent.step(),
        evaluations: records.len(),
        final_score,
        max_score,
        wall_clock_s: elapsed,
        convergence_target: target,
        convergence_step: convergence.and_then(|c| c.step()),
        convergence_wall_clock_s: convergence.and_then(|c| c.wall_clock_s()),
        config,
    };
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
