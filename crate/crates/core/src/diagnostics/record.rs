use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 9] = [
    "step",
    "wall_clock_s",
    "std_ratio",
    "action_mse",
    "mean_return",
    "normalized_score",
    "alpha",
    "critic_loss",
    "actor_loss",
];

/// One evaluation point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub wall_clock_s: f64,
    pub std_ratio: Option<f64>,
    pub action_mse: f64,
    pub mean_return: f64,
    pub normalized_score: f64,
    pub alpha: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

impl DiagnosticsRecord {
    pub fn to_csv_row(&self) -> String {
        let ratio = self.std_ratio.map(|r| r.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.wall_clock_s,
            ratio,
            self.action_mse,
            self.mean_return,
            self.normalized_score,
            self.alpha,
            self.critic_loss,
            self.actor_loss
        )
    }

    pub fn from_csv_row(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return Err(format!("expected {} fields, got {}", CSV_COLUMNS.len(), f.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            f[i].parse::<f64>()
                .map_err(|e| format!("{}: {e}", CSV_COLUMNS[i]))
        };
        Ok(DiagnosticsRecord {
            step: f[0].parse().map_err(|e| format!("step: {e}"))?,
            wall_clock_s: num(1)?,
            std_ratio: if f[2].is_empty() { None } else { Some(num(2)?) },
            action_mse: num(3)?,
            mean_return: num(4)?,
            normalized_score: num(5)?,
            alpha: num(6)?,
            critic_loss: num(7)?,
            actor_loss: num(8)?,
        })
    }
}

/// The `# config_hash=… run=… seed=…` line heading each diagnostics CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvHeader {
    pub config_hash: String,
    pub run: String,
    pub seed: u64,
}

impl CsvHeader {
    pub fn to_line(&self) -> String {
        format!("# config_hash={} run={} seed={}", self.config_hash, self.run, self.seed)
    }

    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# ")?;
        let (mut hash, mut run, mut seed) = (None, None, None);
        for part in rest.split_whitespace() {
            let (k, v) = part.split_once('=')?;
            match k {
                "config_hash" => hash = Some(v.to_string()),
                "run" => run = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                _ => {}
            }
        }
        Some(CsvHeader {
            config_hash: hash?,
            run: run?,
            seed: seed?,
        })
    }
}

/// Append-only diagnostics CSV; every row is flushed as it is written.
pub struct DiagnosticsWriter {
    file: File,
    path: PathBuf,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path, header: &CsvHeader) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{}\n{}", header.to_line(), CSV_COLUMNS.join(","))
            .map_err(|e| Error::io(path, e))?;
        Ok(DiagnosticsWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    /// Reopen an existing file, dropping rows past `step` so a resumed run
    /// does not duplicate evaluations.
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        let (header, records) = read_diagnostics_csv(path)?;
        let mut w = Self::create(path, &header)?;
        for r in records.iter().filter(|r| r.step <= step) {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.file, "{}", record.to_csv_row())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_diagnostics_csv(path: &Path) -> Result<(CsvHeader, Vec<DiagnosticsRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |offset: usize, reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let at = offset;
        offset += l.len();
        (at, l.trim_end_matches(['\n', '\r']))
    });
    let (_, first) = lines.next().unwrap_or((0, ""));
    let header = CsvHeader::parse(first).ok_or_else(|| corrupt(0, "missing config header".into()))?;
    let (at, cols) = lines.next().unwrap_or((first.len(), ""));
    if cols != CSV_COLUMNS.join(",") {
        return Err(corrupt(at, "unexpected column header".into()));
    }
    let mut records = Vec::new();
    for (at, line) in lines.filter(|(_, l)| !l.is_empty()) {
        records.push(DiagnosticsRecord::from_csv_row(line).map_err(|e| corrupt(at, e))?);
    }
    Ok((header, records))
}

/// Convergence is the first evaluation with score ≥ target − tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCriterion {
    pub target_score: f64,
    pub tolerance: f64,
}

impl ConvergenceCriterion {
    pub const DEFAULT_TOLERANCE: f64 = 2.0;

    pub fn new(target_score: f64) -> Self {
        ConvergenceCriterion {
            target_score,
            tolerance: Self::DEFAULT_TOLERANCE,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.target_score - self.tolerance
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConvergenceReport {
    Converged {
        index: usize,
        step: u64,
        wall_clock_s: f64,
    },
    DidNotConverge,
}

impl ConvergenceReport {
    pub fn step(&self) -> Option<u64> {
        match self {
            ConvergenceReport::Converged { step, .. } => Some(*step),
            ConvergenceReport::DidNotConverge => None,
        }
    }

    pub fn wall_clock_s(&self) -> Option<f64> {
        match self {
            ConvergenceReport::Converged { wall_clock_s, .. } => Some(*wall_clock_s),
            ConvergenceReport::DidNotConverge => None,
        }
    }
}

pub fn detect_convergence(
    records: &[DiagnosticsRecord],
    criterion: &ConvergenceCriterion,
) -> Result<ConvergenceReport> {
    if records.is_empty() {
        return Err(Error::invalid("no diagnostics records"));
    }
    if !(criterion.tolerance >= 0.0) {
        return Err(Error::invalid("convergence tolerance must be non-negative"));
    }
    let threshold = criterion.threshold();
    Ok(
        match first_crossing(records, threshold, |r| Some(r.normalized_score)) {
            Some(index) => ConvergenceReport::Converged {
                index,
                step: records[index].step,
                wall_clock_s: records[index].wall_clock_s,
            },
            None => ConvergenceReport::DidNotConverge,
        },
    )
}

/// Index of the first record whose `key` is at least `threshold`.
pub fn first_crossing(
    records: &[DiagnosticsRecord],
    threshold: f64,
    key: impl Fn(&DiagnosticsRecord) -> Option<f64>,
) -> Option<usize> {
    records
        .iter()
        .position(|r| key(r).is_some_and(|v| v >= threshold))
}

/// Wall-clock of `slow` over wall-clock of `fast`, when both converged.
pub fn speedup_ratio(fast: &ConvergenceReport, slow: &ConvergenceReport) -> Option<f64> {
    let (f, s) = (fast.wall_clock_s()?, slow.wall_clock_s()?);
    (f > 0.0).then(|| s / f)
}
