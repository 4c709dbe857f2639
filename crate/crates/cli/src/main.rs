use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lbsac_core::algorithms::Agent;
use lbsac_core::autodiff::Tensor;
use lbsac_core::diagnostics::{expected_min_mc, lcb_coefficient};
use lbsac_core::envs::{
    batched_returns, generate_dataset, normalized_score, Behavior, EnvId, ScoreReference, ToyEnv,
};
use lbsac_core::harness::{emit_report, parse_config, run_experiment, ReportFormat, RunOptions};
use lbsac_core::{Error, Rng};

/// Offline Q-ensemble actor-critic laboratory.
#[derive(Parser)]
#[command(name = "lbsac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a behavior-policy dataset.
    GenData {
        #[arg(long)]
        env: EnvId,
        #[arg(long)]
        behavior: Behavior,
        #[arg(long, default_value_t = 100_000)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every experiment of a config file, then write `report.json`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only these seeds (repeatable).
        #[arg(long)]
        seed: Vec<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Continue from existing checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint's deterministic policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvId,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate finished runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the LCB coefficient of an ensemble of size N.
    Lcb {
        #[arg(long)]
        n: usize,
        /// Also estimate E[min of N standard normals] by Monte Carlo.
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit code 1: invalid input or configuration. Exit code 2: failure while running.
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData {
            env,
            behavior,
            size,
            seed,
            out,
        } => {
            let data = generate_dataset(env, behavior, size, seed)?;
            data.save(&out)?;
            let returns = data.episode_returns();
            let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
            println!(
                "wrote {} transitions of {env} {behavior} to {} (mean episode return {mean:.3})",
                data.len(),
                out.display()
            );
        }
        Command::Train {
            config,
            seed,
            out,
            jobs,
            resume,
        } => {
            let mut spec = parse_config(&config)?;
            if let Some(out) = out {
                spec.output_dir = out;
            }
            let opts = RunOptions {
                jobs,
                resume,
                seeds: (!seed.is_empty()).then_some(seed),
            };
            let summaries = run_experiment(&spec, &opts)?;
            let mut failed = 0;
            for s in &summaries {
                match (&s.status, s.final_score) {
                    (lbsac_core::harness::RunStatus::Completed, Some(score)) => {
                        println!("{} seed {}: final score {score:.2} after {} steps", s.name, s.seed, s.steps)
                    }
                    (lbsac_core::harness::RunStatus::Failed { step, error }, _) => {
                        failed += 1;
                        eprintln!("{} seed {}: failed at step {step}: {error}", s.name, s.seed);
                    }
                    _ => println!("{} seed {}: no evaluations", s.name, s.seed),
                }
            }
            let report = emit_report(&[spec.output_dir.clone()], ReportFormat::Json, &spec.output_dir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("report: {}", spec.output_dir.join("report.json").display());
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} of {} runs failed", summaries.len())));
            }
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            if episodes == 0 {
                return Err(Failure::Invalid("episodes must be at least 1".into()));
            }
            let agent = Agent::load(&checkpoint)?;
            if agent.policy.obs_dim() != env.obs_dim() || agent.policy.action_dim() != env.action_dim() {
                return Err(Failure::Invalid(format!(
                    "checkpoint policy is {}→{}, {env} needs {}→{}",
                    agent.policy.obs_dim(),
                    agent.policy.action_dim(),
                    env.obs_dim(),
                    env.action_dim()
                )));
            }
            let toy = ToyEnv::new(env);
            let obs_dim = env.obs_dim();
            let returns = batched_returns(&toy, episodes, &mut Rng::new(seed), |obs| {
                let states = Tensor::matrix(obs.len() / obs_dim, obs_dim, obs.to_vec())?;
                Ok::<_, Error>(agent.policy.act(&states)?.data().to_vec())
            })?;
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            let score = normalized_score(mean, &ScoreReference::for_env(env))?;
            let out = serde_json::json!({
                "env": env,
                "episodes": episodes,
                "seed": seed,
                "mean_return": mean,
                "normalized_score": score,
                "returns": returns,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json value"));
        }
        Command::Report { runs, format, out } => {
            let report = emit_report(&runs, format, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for c in &report.configs {
                match &c.final_score {
                    Some(a) => println!(
                        "{} [{}]: final {:.2} ± {:.2} over {} runs ({} failed)",
                        c.name, c.config_hash, a.mean, a.std, c.completed, c.failed
                    ),
                    None => println!("{} [{}]: no completed runs", c.name, c.config_hash),
                }
            }
        }
        Command::Lcb { n, mc_samples, seed } => {
            let k = lcb_coefficient(n)?;
            println!("N = {n}: k = {k:.6}");
            if let Some(samples) = mc_samples {
                if samples == 0 {
                    return Err(Failure::Invalid("mc-samples must be at least 1".into()));
                }
                let mut rng = Rng::new(seed);
                let est = expected_min_mc(n, samples, &mut rng)?;
                println!(
                    "E[min] ≈ {:.6} ± {:.6} ({samples} samples); |k + E[min]| = {:.6}",
                    est.mean,
                    est.std_error,
                    (k + est.mean).abs()
                );
            }
        }
    }
    Ok(())
}
