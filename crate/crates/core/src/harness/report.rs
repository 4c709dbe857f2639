use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::run::RunSummary;
use crate::algorithms::Algorithm;
use crate::diagnostics::{
    detect_convergence, first_crossing, read_diagnostics_csv, ConvergenceCriterion, DiagnosticsRecord,
};
use crate::error::{Error, Result};

/// Percentages of the final score tracked by the time-to-percentage curves.
pub const PERCENT_LEVELS: [f64; 7] = [50.0, 60.0, 70.0, 80.0, 90.0, 95.0, 100.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Aggregate {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Aggregate {
            mean,
            std: var.sqrt(),
            values: values.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Distribution {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Distribution {
            count: v.len(),
            min: v[0],
            median: median_sorted(&v),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v[v.len() - 1],
        })
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median of the values, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (!v.is_empty()).then(|| median_sorted(&v))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub algorithm: Option<Algorithm>,
    pub completed: bool,
    pub error: Option<String>,
    pub final_score: f64,
    pub max_score: f64,
    pub convergence_target: f64,
    pub convergence_step: Option<u64>,
    pub convergence_wall_clock_s: Option<f64>,
    /// First step reaching each of [`PERCENT_LEVELS`] of the final score.
    pub percent_steps: Vec<Option<u64>>,
    pub percent_wall_clock_s: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PercentPoint {
    pub percent: f64,
    pub reached: usize,
    pub median_step: Option<f64>,
    pub median_wall_clock_s: Option<f64>,
}

/// Aggregates of one configuration over its completed seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigReport {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub completed: usize,
    pub failed: usize,
    pub final_score: Option<Aggregate>,
    pub max_score: Option<Aggregate>,
    pub convergence_steps: Option<Distribution>,
    pub convergence_wall_clock_s: Option<Distribution>,
    pub not_converged: usize,
    pub percent_of_final: Vec<PercentPoint>,
    pub runs: Vec<RunRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgorithmConvergence {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub not_converged: usize,
    pub steps: Option<Distribution>,
    pub wall_clock_s: Option<Distribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub configs: Vec<ConfigReport>,
    /// Convergence pooled over every dataset and seed of an algorithm.
    pub by_algorithm: Vec<AlgorithmConvergence>,
    pub warnings: Vec<String>,
}

/// Run directories (holding `diagnostics.csv` or `summary.json`) under
/// `root`, sorted.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("diagnostics.csv").is_file() || dir.join("summary.json").is_file() {
            found.push(dir);
            continue;
        }
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Per-run figures from its diagnostics; `target` defaults to the final
/// score.
pub fn summarize_records(records: &[DiagnosticsRecord], target: Option<f64>) -> Result<RunFigures> {
    let last = records
        .last()
        .ok_or_else(|| Error::invalid("no diagnostics records"))?;
    let final_score = last.normalized_score;
    let max_score = records
        .iter()
        .map(|r| r.normalized_score)
        .fold(f64::NEG_INFINITY, f64::max);
    let target = target.unwrap_or(final_score);
    let convergence = detect_convergence(records, &ConvergenceCriterion::new(target))?;
    let crossings: Vec<Option<usize>> = PERCENT_LEVELS
        .iter()
        .map(|p| first_crossing(records, final_score * p / 100.0, |r| Some(r.normalized_score)))
        .collect();
    Ok(RunFigures {
        final_score,
        max_score,
        convergence_target: target,
        convergence_step: convergence.step(),
        convergence_wall_clock_s: convergence.wall_clock_s(),
        percent_steps: crossings.iter().map(|c| c.map(|i| records[i].step)).collect(),
        percent_wall_clock_s: crossings.iter().map(|c| c.map(|i| records[i].wall_clock_s)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFigures {
    pub final_score: f64,
    pub max_score: f64,
    pub convergence_target: f64,
    pub convergence_step: Option<u64>,
    pub convergence_wall_clock_s: Option<f64>,
    pub percent_steps: Vec<Option<u64>>,
    pub percent_wall_clock_s: Vec<Option<f64>>,
}

fn load_run(dir: &Path, warnings: &mut Vec<String>) -> Option<RunRecord> {
    let summary_path = dir.join("summary.json");
    let summary: Option<RunSummary> = if summary_path.is_file() {
        match std::fs::read(&summary_path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
        {
            Ok(s) => Some(s),
            Err(e) => {
                warnings.push(format!("{}: unreadable summary: {e}", summary_path.display()));
                None
            }
        }
    } else {
        None
    };
    let csv = dir.join("diagnostics.csv");
    if !csv.is_file() {
        warnings.push(format!("{}: missing diagnostics.csv, run skipped", dir.display()));
        return None;
    }
    let (header, records) = match read_diagnostics_csv(&csv) {
        Ok(v) => v,
        Err(e) => {
            warnings.push(format!("{e}; run skipped"));
            return None;
        }
    };
    if let Some(s) = &summary {
        if s.config_hash != header.config_hash {
            warnings.push(format!(
                "{}: summary config {} disagrees with diagnostics config {}, run skipped",
                dir.display(),
                s.config_hash,
                header.config_hash
            ));
            return None;
        }
    }
    let target = summary.as_ref().and_then(|s| s.convergence_target);
    let figures = match summarize_records(&records, target) {
        Ok(f) => f,
        Err(e) => {
            warnings.push(format!("{}: {e}, run skipped", csv.display()));
            return None;
        }
    };
    let error = summary.as_ref().and_then(|s| match &s.status {
        super::run::RunStatus::Failed { error, .. } => Some(error.clone()),
        super::run::RunStatus::Completed => None,
    });
    Some(RunRecord {
        dir: dir.to_path_buf(),
        name: header.run,
        seed: header.seed,
        config_hash: header.config_hash,
        algorithm: summary.as_ref().map(|s| s.algorithm),
        completed: error.is_none(),
        error,
        final_score: figures.final_score,
        max_score: figures.max_score,
        convergence_target: figures.convergence_target,
        convergence_step: figures.convergence_step,
        convergence_wall_clock_s: figures.convergence_wall_clock_s,
        percent_steps: figures.percent_steps,
        percent_wall_clock_s: figures.percent_wall_clock_s,
    })
}

/// Group runs by configuration hash and aggregate completed runs only.
pub fn build_report(runs: Vec<RunRecord>, mut warnings: Vec<String>) -> Report {
    let mut groups: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
    for run in runs {
        groups
            .entry((run.name.clone(), run.config_hash.clone()))
            .or_default()
            .push(run);
    }
    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    for (name, _) in groups.keys() {
        *names.entry(name).or_default() += 1;
    }
    for (name, count) in names {
        if count > 1 {
            warnings.push(format!("{name}: runs from {count} different configurations kept apart"));
        }
    }

    let mut configs = Vec::new();
    for ((name, config_hash), mut runs) in groups {
        runs.sort_by_key(|r| r.seed);
        let done: Vec<&RunRecord> = runs.iter().filter(|r| r.completed).collect();
        let finals: Vec<f64> = done.iter().map(|r| r.final_score).collect();
        let maxes: Vec<f64> = done.iter().map(|r| r.max_score).collect();
        let conv_steps: Vec<f64> = done.iter().filter_map(|r| r.convergence_step).map(|s| s as f64).collect();
        let conv_wall: Vec<f64> = done.iter().filter_map(|r| r.convergence_wall_clock_s).collect();
        let percent_of_final = PERCENT_LEVELS
            .iter()
            .enumerate()
            .map(|(k, &percent)| {
                let steps: Vec<f64> = done.iter().filter_map(|r| r.percent_steps[k]).map(|s| s as f64).collect();
                let wall: Vec<f64> = done.iter().filter_map(|r| r.percent_wall_clock_s[k]).collect();
                PercentPoint {
                    percent,
                    reached: steps.len(),
                    median_step: median(&steps),
                    median_wall_clock_s: median(&wall),
                }
            })
            .collect();
        configs.push(ConfigReport {
            name,
            config_hash,
            seeds: runs.iter().map(|r| r.seed).collect(),
            completed: done.len(),
            failed: runs.len() - done.len(),
            final_score: Aggregate::from_values(&finals),
            max_score: Aggregate::from_values(&maxes),
            not_converged: done.len() - conv_steps.len(),
            convergence_steps: Distribution::from_values(&conv_steps),
            convergence_wall_clock_s: Distribution::from_values(&conv_wall),
            percent_of_final,
            runs,
        });
    }

    let mut pooled: BTreeMap<Algorithm, Vec<&RunRecord>> = BTreeMap::new();
    for c in &configs {
        for r in c.runs.iter().filter(|r| r.completed) {
            if let Some(a) = r.algorithm {
                pooled.entry(a).or_default().push(r);
            }
        }
    }
    let by_algorithm = pooled
        .into_iter()
        .map(|(algorithm, runs)| {
            let steps: Vec<f64> = runs.iter().filter_map(|r| r.convergence_step).map(|s| s as f64).collect();
            let wall: Vec<f64> = runs.iter().filter_map(|r| r.convergence_wall_clock_s).collect();
            AlgorithmConvergence {
                algorithm,
                runs: runs.len(),
                not_converged: runs.len() - steps.len(),
                steps: Distribution::from_values(&steps),
                wall_clock_s: Distribution::from_values(&wall),
            }
        })
        .collect();
    Report {
        configs,
        by_algorithm,
        warnings,
    }
}

/// Collect every run under `run_dirs` and write the report into `out_dir`:
/// `report.json`, or `scores.csv`, `convergence.csv`, `percent_of_final.csv`
/// and `runs.csv`. Unreadable runs become warnings.
pub fn emit_report(run_dirs: &[PathBuf], format: ReportFormat, out_dir: &Path) -> Result<Report> {
    let mut warnings = Vec::new();
    let mut runs = Vec::new();
    for root in run_dirs {
        if !root.is_dir() {
            warnings.push(format!("{}: not a directory", root.display()));
            continue;
        }
        for dir in find_run_dirs(root)? {
            if let Some(r) = load_run(&dir, &mut warnings) {
                runs.push(r);
            }
        }
    }
    let report = build_report(runs, warnings);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = match format {
        ReportFormat::Json => vec![("report.json", serde_json::to_string_pretty(&report)? + "\n")],
        ReportFormat::Csv => vec![
            ("scores.csv", scores_csv(&report)),
            ("convergence.csv", convergence_csv(&report)),
            ("percent_of_final.csv", percent_csv(&report)),
            ("runs.csv", runs_csv(&report)),
        ],
    };
    for (name, text) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn scores_csv(r: &Report) -> String {
    let mut s = String::from("name,config_hash,runs,completed,failed,final_mean,final_std,max_mean,max_std\n");
    for c in &r.configs {
        let f = c.final_score.as_ref();
        let m = c.max_score.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.name,
            c.config_hash,
            c.runs.len(),
            c.completed,
            c.failed,
            opt(f.map(|a| a.mean)),
            opt(f.map(|a| a.std)),
            opt(m.map(|a| a.mean)),
            opt(m.map(|a| a.std)),
        );
    }
    s
}

fn convergence_csv(r: &Report) -> String {
    let mut s = String::from(
        "name,config_hash,converged,not_converged,step_min,step_median,step_mean,step_max,\
         wall_clock_min,wall_clock_median,wall_clock_mean,wall_clock_max\n",
    );
    let cols = |d: Option<&Distribution>| {
        [
            opt(d.map(|d| d.min)),
            opt(d.map(|d| d.median)),
            opt(d.map(|d| d.mean)),
            opt(d.map(|d| d.max)),
        ]
        .join(",")
    };
    for c in &r.configs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            c.name,
            c.config_hash,
            c.convergence_steps.as_ref().map_or(0, |d| d.count),
            c.not_converged,
            cols(c.convergence_steps.as_ref()),
            cols(c.convergence_wall_clock_s.as_ref()),
        );
    }
    s
}

fn percent_csv(r: &Report) -> String {
    let mut s = String::from("name,config_hash,percent,reached,median_step,median_wall_clock_s\n");
    for c in &r.configs {
        for p in &c.percent_of_final {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.name,
                c.config_hash,
                p.percent,
                p.reached,
                opt(p.median_step),
                opt(p.median_wall_clock_s)
            );
        }
    }
    s
}

fn runs_csv(r: &Report) -> String {
    let mut s = String::from(
        "name,config_hash,seed,completed,final_score,max_score,convergence_target,convergence_step,convergence_wall_clock_s,dir\n",
    );
    for c in &r.configs {
        for run in &c.runs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                run.name,
                run.config_hash,
                run.seed,
                run.completed,
                run.final_score,
                run.max_score,
                run.convergence_target,
                opt(run.convergence_step),
                opt(run.convergence_wall_clock_s),
                run.dir.display()
            );
        }
    }
    s
}
