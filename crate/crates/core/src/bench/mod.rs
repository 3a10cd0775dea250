//! Repeated-trial benchmarks over the registered problems.

pub mod registry;

pub use registry::{lookup, registry, Family, ProblemSpec, Published};
pub mod run;

pub use run::{run_benchmark, sampling_cov, BenchmarkSpec, EstimatorKind, Overrides, TrialRecord, TrialSummary};
pub mod config;
pub mod report;
pub mod verify;

pub use config::RunFile;
pub use report::{deterministic_payload, emit_report, write_csv, ReportFiles, RunReport};
pub use verify::{Check, Suite};
