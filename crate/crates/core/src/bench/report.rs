//! CSV and JSON output of a benchmark run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::run::{BenchmarkSpec, Overrides, TrialRecord, TrialSummary};
use crate::{Error, Result};

pub const CSV_COLUMNS: [&str; 17] = [
    "trial",
    "seed",
    "status",
    "p_f",
    "cov",
    "sampling_cov",
    "n_total",
    "n_adam",
    "n_burnin",
    "n",
    "m",
    "ess_min",
    "accept_rate",
    "thinning",
    "n_s",
    "wall_time_s",
    "error",
];

/// Label of the footer row holding the aggregates.
pub const AGGREGATE_ROW: &str = "aggregate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamp {
    pub unix_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    /// Commit of the working directory the run was started from, if any.
    pub git_commit: Option<String>,
    pub problem: String,
    pub estimator: String,
    pub seed_base: u64,
    pub reps: usize,
    pub parallelism: usize,
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub timestamp: Timestamp,
    pub metadata: RunMetadata,
    pub summary: TrialSummary,
}

fn git_commit() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

impl RunReport {
    pub fn new(spec: &BenchmarkSpec, summary: TrialSummary) -> Self {
        let unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        RunReport {
            timestamp: Timestamp { unix_s },
            metadata: RunMetadata {
                tool: "astpa-bench".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                git_commit: git_commit(),
                problem: spec.problem.id.into(),
                estimator: spec.estimator.to_string(),
                seed_base: spec.seed_base,
                reps: spec.reps,
                parallelism: spec.parallelism,
                overrides: spec.overrides.clone(),
            },
            summary,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// The JSON report without the fields that depend on when and how fast it ran
/// (`timestamp` and every `wall_time_s`). Two runs of the same spec and seed
/// produce the same payload.
pub fn deterministic_payload(json: &str) -> Result<String> {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(map) => {
                map.remove("timestamp");
                map.remove("wall_time_s");
                map.values_mut().for_each(strip);
            }
            serde_json::Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v: serde_json::Value = serde_json::from_str(json)?;
    strip(&mut v);
    Ok(serde_json::to_string(&v)?)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn trial_row(r: &TrialRecord) -> Vec<String> {
    let a = r.astpa.as_ref();
    vec![
        r.trial.to_string(),
        r.seed.to_string(),
        if r.is_ok() { "ok" } else { "failed" }.into(),
        opt_float(r.p_f),
        opt_float(r.cov),
        String::new(),
        opt(r.n_total),
        opt(a.map(|a| a.ledger.n_adam)),
        opt(a.map(|a| a.ledger.n_burnin)),
        opt(a.map(|a| a.ledger.n)),
        opt(a.map(|a| a.ledger.m)),
        opt_float(r.ess_min),
        opt_float(a.map(|a| a.accept_rate)),
        opt(a.map(|a| a.thinning)),
        opt(a.map(|a| a.n_s)),
        fmt_float(r.wall_time_s),
        r.error.clone().unwrap_or_default(),
    ]
}

/// Footer row: means over completed trials, sampling C.o.V across them and
/// total wall time.
fn aggregate_row(s: &TrialSummary) -> Vec<String> {
    let mut row = vec![String::new(); CSV_COLUMNS.len()];
    row[0] = AGGREGATE_ROW.into();
    row[2] = format!("{}/{}", s.completed, s.reps);
    row[3] = opt_float(s.mean_p);
    row[4] = opt_float(s.mean_analytical_cov);
    row[5] = opt_float(s.sampling_cov);
    row[6] = opt_float(s.mean_n_total);
    row[11] = opt_float(s.mean_ess_min);
    row[15] = fmt_float(s.records.iter().map(|r| r.wall_time_s).sum());
    row
}

pub fn write_csv<W: std::io::Write>(summary: &TrialSummary, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in &summary.records {
        w.write_record(trial_row(r))?;
    }
    w.write_record(aggregate_row(summary))?;
    w.flush()?;
    Ok(())
}

/// Paths of the files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub dir: PathBuf,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes `<problem>_<estimator>.csv` and `.json` into `dir`, creating it if needed.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    let stem = format!("{}_{}", report.summary.problem, report.summary.estimator);
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    write_csv(&report.summary, fs::File::create(&csv)?)?;
    fs::write(&json, report.to_json()? + "\n")?;
    Ok(ReportFiles { dir: dir.to_path_buf(), csv, json })
}
