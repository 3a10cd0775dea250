//! Repeated independent trials of one estimator on one registry problem.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::registry::{lookup, ProblemSpec, Published};
use crate::baselines::{crude_mc, sus, McResult, SusConfig, SusResult};
use crate::estimator::{run_astpa, AstpaConfig, Budget, EstimateReport, ProblemSetup, SamplerKind};
use crate::target::AstpaParams;
use crate::{Error, Result};

/// Crude Monte Carlo sample size when none is given.
pub const DEFAULT_MC_SAMPLES: u64 = 1_000_000;
pub const DEFAULT_REPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    AstpaQnp,
    AstpaHmc,
    Sus,
    Mc,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [EstimatorKind::AstpaQnp, EstimatorKind::AstpaHmc, EstimatorKind::Sus, EstimatorKind::Mc];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::AstpaQnp => "astpa-qnp",
            EstimatorKind::AstpaHmc => "astpa-hmc",
            EstimatorKind::Sus => "sus",
            EstimatorKind::Mc => "mc",
        }
    }

    fn sampler(self) -> Option<SamplerKind> {
        match self {
            EstimatorKind::AstpaQnp => Some(SamplerKind::Qnp),
            EstimatorKind::AstpaHmc => Some(SamplerKind::Hmc),
            _ => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}` (expected astpa-qnp, astpa-hmc, sus or mc)")))
    }
}

/// Departures from the registry defaults.
///
/// For ASTPA, any of `n`, `burnin`, `m` switches to a fixed budget; missing
/// parts default to 15% and 30% of `n`. For subset simulation `n` is the
/// number of samples per level, for crude Monte Carlo the sample count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub sigma: Option<f64>,
    pub q: Option<f64>,
    pub n: Option<usize>,
    pub burnin: Option<usize>,
    pub m: Option<usize>,
    pub n_total: Option<u64>,
    pub diag_mass: Option<bool>,
    pub curvature_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSpec {
    pub problem: ProblemSpec,
    pub estimator: EstimatorKind,
    pub reps: usize,
    pub seed_base: u64,
    /// Worker threads; 0 uses rayon's default.
    pub parallelism: usize,
    pub overrides: Overrides,
}

impl BenchmarkSpec {
    pub fn new(problem_id: &str, estimator: EstimatorKind) -> Result<Self> {
        Ok(BenchmarkSpec {
            problem: lookup(problem_id)?,
            estimator,
            reps: DEFAULT_REPS,
            seed_base: 0,
            parallelism: 0,
            overrides: Overrides::default(),
        })
    }

    pub fn params(&self) -> Result<AstpaParams> {
        let p = self.problem.params;
        AstpaParams::new(self.overrides.sigma.unwrap_or(p.sigma), self.overrides.q.unwrap_or(p.q))
    }

    /// Estimator settings for the ASTPA kinds.
    pub fn astpa_config(&self) -> Result<AstpaConfig> {
        let sampler = self
            .estimator
            .sampler()
            .ok_or_else(|| Error::Config(format!("{} is not an ASTPA estimator", self.estimator)))?;
        let mut c = self.problem.config(sampler);
        c.params = self.params()?;
        let o = &self.overrides;
        if let Some(n_total) = o.n_total {
            c.budget = Budget::total(n_total);
        }
        if o.n.is_some() || o.burnin.is_some() || o.m.is_some() {
            let n = match (o.n, c.budget) {
                (Some(n), _) | (None, Budget::Fixed { n, .. }) => n,
                (None, Budget::Total { .. }) => return Err(Error::Config("a fixed budget needs `n`".into())),
            };
            let n_burnin = o.burnin.unwrap_or((0.15 * n as f64).round() as usize);
            let m = o.m.unwrap_or((0.3 * n as f64).round() as usize);
            c.budget = Budget::Fixed { n_burnin, n, m };
        }
        if o.diag_mass.is_some() {
            c.diagonal = o.diag_mass;
        }
        if let Some(t) = o.curvature_threshold {
            c.c_min = t;
        }
        Ok(c)
    }

    pub fn published(&self) -> Option<Published> {
        match self.estimator {
            EstimatorKind::AstpaQnp => Some(self.problem.qnp),
            EstimatorKind::AstpaHmc => self.problem.hmc,
            EstimatorKind::Sus => self.problem.sus,
            EstimatorKind::Mc => None,
        }
    }
}

/// Outcome of one trial. Failed trials keep their seed and error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    #[serde(with = "crate::serde_float::option")]
    pub p_f: Option<f64>,
    /// The estimator's own C.o.V estimate, where it has one.
    #[serde(with = "crate::serde_float::option")]
    pub cov: Option<f64>,
    pub n_total: Option<u64>,
    #[serde(with = "crate::serde_float::option")]
    pub ess_min: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
    pub astpa: Option<EstimateReport>,
    pub sus: Option<SusResult>,
    pub mc: Option<McResult>,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn failed(trial: usize, seed: u64, error: &Error, wall_time_s: f64) -> Self {
        TrialRecord {
            trial,
            seed,
            p_f: None,
            cov: None,
            n_total: None,
            ess_min: None,
            wall_time_s,
            error: Some(error.to_string()),
            astpa: None,
            sus: None,
            mc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub problem: String,
    pub estimator: EstimatorKind,
    pub params: AstpaParams,
    pub seed_base: u64,
    pub reps: usize,
    pub completed: usize,
    pub failed: usize,
    #[serde(with = "crate::serde_float::option")]
    pub mean_n_total: Option<f64>,
    #[serde(with = "crate::serde_float::option")]
    pub mean_p: Option<f64>,
    /// Across-trial C.o.V with the `n − 1` divisor; needs two completed trials.
    #[serde(with = "crate::serde_float::option")]
    pub sampling_cov: Option<f64>,
    #[serde(with = "crate::serde_float::option")]
    pub mean_analytical_cov: Option<f64>,
    #[serde(with = "crate::serde_float::option")]
    pub mean_ess_min: Option<f64>,
    pub reference: Option<f64>,
    pub published: Option<Published>,
    pub records: Vec<TrialRecord>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `sd/mean` of `values` with the `n − 1` divisor.
pub fn sampling_cov(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Some(var.sqrt() / m)
}

impl TrialSummary {
    /// Aggregates over the completed records.
    pub fn from_records(spec: &BenchmarkSpec, records: Vec<TrialRecord>) -> Result<Self> {
        let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.is_ok()).collect();
        let collect = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let p = collect(&|r| r.p_f);
        Ok(TrialSummary {
            problem: spec.problem.id.to_string(),
            estimator: spec.estimator,
            params: spec.params()?,
            seed_base: spec.seed_base,
            reps: records.len(),
            completed: ok.len(),
            failed: records.len() - ok.len(),
            mean_n_total: mean(&collect(&|r| r.n_total.map(|n| n as f64))),
            mean_p: mean(&p),
            sampling_cov: sampling_cov(&p),
            mean_analytical_cov: mean(&collect(&|r| r.cov)),
            mean_ess_min: mean(&collect(&|r| r.ess_min)),
            reference: spec.problem.reference,
            published: spec.published(),
            records,
        })
    }
}

enum Prepared {
    Astpa(ProblemSetup, AstpaConfig),
    Sus(SusConfig),
    Mc(u64),
}

fn run_trial(spec: &BenchmarkSpec, prepared: &Prepared, trial: usize) -> TrialRecord {
    let seed = spec.seed_base.wrapping_add(trial as u64);
    let start = Instant::now();
    let outcome: Result<TrialRecord> = (|| {
        let mut rec = TrialRecord::failed(trial, seed, &Error::Config(String::new()), 0.0);
        rec.error = None;
        match prepared {
            Prepared::Astpa(setup, config) => {
                let r = run_astpa(setup, config, seed)?;
                rec.p_f = Some(r.p_f);
                rec.cov = r.cov;
                rec.n_total = Some(r.n_total);
                rec.ess_min = Some(r.ess_min);
                rec.astpa = Some(r);
            }
            Prepared::Sus(config) => {
                let problem = spec.problem.limit_state()?;
                let r = sus(&spec.problem.working_space()?, &problem, config, &mut crate::rng(seed))?;
                rec.p_f = Some(r.p);
                rec.n_total = Some(r.calls);
                rec.sus = Some(r);
            }
            Prepared::Mc(n) => {
                let problem = spec.problem.limit_state()?;
                let r = crude_mc(&spec.problem.working_space()?, &problem, *n, &mut crate::rng(seed))?;
                rec.p_f = Some(r.p);
                rec.cov = r.cov;
                rec.n_total = Some(r.calls);
                rec.mc = Some(r);
            }
        }
        Ok(rec)
    })();
    let elapsed = start.elapsed().as_secs_f64();
    match outcome {
        Ok(mut rec) => {
            rec.wall_time_s = elapsed;
            rec
        }
        Err(e) => {
            log::warn!("{} {} trial {trial} (seed {seed}) failed: {e}", spec.problem.id, spec.estimator);
            TrialRecord::failed(trial, seed, &e, elapsed)
        }
    }
}

/// Runs `spec.reps` trials with seeds `seed_base + i`. Failed trials are
/// recorded and left out of the aggregates.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<TrialSummary> {
    if spec.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let prepared = match spec.estimator {
        EstimatorKind::AstpaQnp | EstimatorKind::AstpaHmc => Prepared::Astpa(spec.problem.setup()?, spec.astpa_config()?),
        EstimatorKind::Sus => Prepared::Sus(SusConfig::new(spec.overrides.n.unwrap_or(spec.problem.sus_n))),
        EstimatorKind::Mc => Prepared::Mc(spec.overrides.n.map(|n| n as u64).unwrap_or(DEFAULT_MC_SAMPLES)),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let records: Vec<TrialRecord> =
        pool.install(|| (0..spec.reps).into_par_iter().map(|i| run_trial(spec, &prepared, i)).collect());
    TrialSummary::from_records(spec, records)
}
