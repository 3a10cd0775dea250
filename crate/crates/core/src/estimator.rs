//! The full pipeline: target, discovery, chain, shifted estimate, inverse
//! importance sampling and their combination, with an exact model-call ledger.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::discovery::{discover, discover_from, placement_check, AdamConfig, Placement};
use crate::error::StageExt;
use crate::hmc::{hmcmc_chain, thinning_stride, ChainRun, SamplerConfig};
use crate::iis::{estimate_ch, fit_gmm, thin_rows, EmConfig, IisResult, SplitRule};
use crate::limit_state::LimitStateProblem;
use crate::qnp::{qnp_chain, QnpConfig, CURVATURE_THRESHOLD, DIAGONAL_ABOVE};
use crate::special::log_mean_exp;
use crate::target::{AstpaParams, AstpaTarget, GcBranch, State};
use crate::transform::BoundSpec;
use crate::{Error, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Qnp,
    Hmc,
}

/// How the model-call budget is split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Budget {
    /// Fixed iteration counts; step-size searches add to `N_BurnIn`.
    Fixed { n_burnin: usize, n: usize, m: usize },
    /// Exact `N_Total`: after discovery the remaining calls are split as
    /// `N : N_BurnIn : M = 1 : burnin_frac : m_frac` and IIS takes whatever the
    /// chain left over.
    Total { n_total: u64, burnin_frac: f64, m_frac: f64 },
}

impl Budget {
    pub const DEFAULT_BURNIN_FRAC: f64 = 0.15;
    pub const DEFAULT_M_FRAC: f64 = 0.3;

    pub fn total(n_total: u64) -> Self {
        Budget::Total { n_total, burnin_frac: Self::DEFAULT_BURNIN_FRAC, m_frac: Self::DEFAULT_M_FRAC }
    }
}

/// A rare-event problem ready for the pipeline.
#[derive(Debug, Clone)]
pub struct ProblemSetup {
    /// Density on the sampler's (unbounded) space.
    pub model: Arc<dyn LogDensity>,
    pub limit_state: LimitStateProblem,
    /// Map from the sampler's space to the limit state's space.
    pub transform: Option<BoundSpec>,
    /// Reference point for `g_c`, in the limit state's space.
    pub mean: DVector<f64>,
    /// Adam's starting point on the sampler's space; the image of `mean` if unset.
    pub adam_start: Option<DVector<f64>>,
    /// `ln C_π` for an unnormalized model.
    pub log_c_pi: Option<f64>,
}

impl ProblemSetup {
    /// The sampling target for `params` with its value at the reference point.
    pub fn target(&self, params: AstpaParams) -> Result<(AstpaTarget, State)> {
        AstpaTarget::new(self.model.clone(), Arc::new(self.limit_state.clone()), self.transform.clone(), params, &self.mean)
    }

    /// Adam's starting point on the sampler's space.
    pub fn start(&self) -> Result<DVector<f64>> {
        match (&self.adam_start, &self.transform) {
            (Some(x0), _) => Ok(x0.clone()),
            (None, Some(t)) => t.to_unbounded(&self.mean),
            (None, None) => Ok(self.mean.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstpaConfig {
    pub params: AstpaParams,
    pub sampler: SamplerKind,
    pub adam: AdamConfig,
    pub budget: Budget,
    pub n_leapfrog: usize,
    /// Diagonal inverse Hessian; by default above 150 dimensions.
    pub diagonal: Option<bool>,
    pub c_min: f64,
    /// Multiplies `h̃` by `exp(log_scale)`; the estimate must not change.
    pub log_scale: f64,
}

impl AstpaConfig {
    pub fn new(params: AstpaParams, sampler: SamplerKind, budget: Budget) -> Self {
        AstpaConfig {
            params,
            sampler,
            adam: AdamConfig::default(),
            budget,
            n_leapfrog: 1,
            diagonal: None,
            c_min: CURVATURE_THRESHOLD,
            log_scale: 0.0,
        }
    }
}

/// Model calls by stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ledger {
    pub n_adam: u64,
    pub n_burnin: u64,
    pub n: u64,
    pub m: u64,
}

impl Ledger {
    pub fn total(&self) -> u64 {
        self.n_adam + self.n_burnin + self.n + self.m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    #[serde(with = "crate::serde_float::any")]
    pub p_f: f64,
    #[serde(with = "crate::serde_float::any")]
    pub log_p_f: f64,
    pub p_tilde: f64,
    #[serde(with = "crate::serde_float::any")]
    pub log_p_tilde: f64,
    #[serde(with = "crate::serde_float::any")]
    pub c_h: f64,
    #[serde(with = "crate::serde_float::any")]
    pub log_c_h: f64,
    #[serde(with = "crate::serde_float::option")]
    pub log_c_pi: Option<f64>,
    /// Analytical coefficient of variation; `None` without failure samples.
    #[serde(with = "crate::serde_float::option")]
    pub cov: Option<f64>,
    pub ledger: Ledger,
    pub n_total: u64,
    pub thinning: usize,
    pub n_s: usize,
    #[serde(with = "crate::serde_float::any")]
    pub ess_min: f64,
    pub split_rule: SplitRule,
    pub gmm_components: usize,
    pub accept_rate: f64,
    pub step_size: f64,
    pub g_c: f64,
    pub gc_branch: GcBranch,
    pub placement: Placement,
    pub adam_iterations: usize,
    pub failure_fraction: f64,
    pub seed: u64,
    pub wall_time_s: f64,
    pub diagnostics: Vec<String>,
}

/// Shifted estimate `p̃ = mean(I(g ≤ 0) · π/h̃)` over all samples, in log space
/// (`-inf` without failure samples).
pub fn shifted_estimate(samples: &[State]) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = samples
        .iter()
        .map(|s| if s.g <= 0.0 { s.log_pi - s.log_p } else { f64::NEG_INFINITY })
        .collect();
    log_mean_exp(&terms)
}

/// `Var(p̃)/p̃²` from a thinned subset of the weights.
pub fn shifted_rel_var(samples: &[State], stride: usize, log_p_tilde: f64) -> f64 {
    let w: Vec<f64> = samples
        .iter()
        .step_by(stride.max(1))
        .map(|s| if s.g <= 0.0 { (s.log_pi - s.log_p - log_p_tilde).exp() } else { 0.0 })
        .collect();
    let n = w.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    w.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (n * (n - 1.0))
}

/// `ln p̂ = ln p̃ + ln Ĉ_h`, with a diagnostic when there were no failure samples.
pub fn combine(log_p_tilde: f64, log_c_h: f64) -> (f64, Option<String>) {
    if log_p_tilde == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, Some("no failure samples; increase N or relax the target".into()));
    }
    (log_p_tilde + log_c_h, None)
}

/// Coefficient of variation of a product of independent estimates given their
/// squared coefficients of variation.
pub fn analytical_cov(rel_var_p_tilde: f64, rel_var_c: f64) -> f64 {
    (rel_var_p_tilde + rel_var_c + rel_var_p_tilde * rel_var_c).sqrt()
}

fn run_chain(
    target: &AstpaTarget,
    init: State,
    config: &AstpaConfig,
    n_burnin: usize,
    n: usize,
    rng: &mut crate::Rng,
) -> Result<ChainRun> {
    let d = target.model().dim();
    match config.sampler {
        SamplerKind::Hmc => {
            let mut c = SamplerConfig::new(d, n_burnin, n);
            c.n_leapfrog = config.n_leapfrog;
            hmcmc_chain(target, init, &c, rng)
        }
        SamplerKind::Qnp => {
            let mut c = QnpConfig::new(d, n_burnin, n);
            c.sampler.n_leapfrog = config.n_leapfrog;
            c.c_min = config.c_min;
            c.diagonal = config.diagonal.unwrap_or(d > DIAGONAL_ABOVE);
            Ok(qnp_chain(target, init, &c, rng)?.0)
        }
    }
}

/// Runs the whole estimator once on a fresh copy of the problem's call counter.
pub fn run_astpa(setup: &ProblemSetup, config: &AstpaConfig, seed: u64) -> Result<EstimateReport> {
    let start = Instant::now();
    let mut rng = crate::rng(seed);
    let mut diagnostics = Vec::new();
    let (target, mean_state) = setup.target(config.params).stage(Stage::Target)?;
    let problem = target.problem().clone();

    let found = match &setup.adam_start {
        Some(x0) if *x0 != mean_state.x => discover_from(&target, x0, &config.adam),
        _ => discover(&target, mean_state, &config.adam),
    }
    .stage(Stage::Discovery)?;
    let n_adam = 1 + found.calls;
    let placement = placement_check(&target, &found.state);
    if let Placement::RelaxNeeded { sigma, q } = placement {
        let msg = format!("Adam ended far from the failure domain (g = {}); consider σ = {sigma}, q = {q}", found.state.g);
        log::warn!("{msg}");
        diagnostics.push(msg);
    }

    let (n_burnin, n) = match config.budget {
        Budget::Fixed { n_burnin, n, .. } => (n_burnin, n),
        Budget::Total { n_total, burnin_frac, m_frac } => {
            let rest = n_total.checked_sub(n_adam).unwrap_or(0) as f64 / config.n_leapfrog as f64;
            let n = (rest / (1.0 + burnin_frac + m_frac)).floor() as usize;
            ((burnin_frac * n as f64).round() as usize, n)
        }
    };
    if n < 2 {
        return Err(Error::InvalidParameter(format!("budget leaves {n} samples after discovery")).at(Stage::Sampling));
    }
    let chain = run_chain(&target, found.state, config, n_burnin, n, &mut rng).stage(Stage::Sampling)?;

    // Discovery and the chain depend on h̃ only through ratios, so they run on
    // the unscaled target; the scale enters wherever values of h̃ do.
    let weighted = target.scaled(config.log_scale);
    let scaled: Vec<State> = chain
        .samples
        .iter()
        .map(|st| State { log_p: st.log_p + config.log_scale, ..st.clone() })
        .collect();
    let log_p_tilde = shifted_estimate(&scaled);
    let ess_min = chain.ess_min();
    let stride = thinning_stride(chain.samples.len(), ess_min);
    let samples = chain.sample_matrix();
    let thinned = thin_rows(&samples, stride);
    let n_s = thinned.nrows();
    let fit = fit_gmm(&thinned, &EmConfig::for_samples(target.model().dim(), n_s), &mut rng).stage(Stage::Fit)?;

    let m = match config.budget {
        Budget::Fixed { m, .. } => m,
        Budget::Total { n_total, .. } => {
            let used = n_adam + chain.calls.total();
            n_total.checked_sub(used).unwrap_or(0) as usize
        }
    };
    if m < 2 {
        return Err(Error::InvalidParameter(format!("budget leaves {m} draws for the normalizing constant")).at(Stage::Iis));
    }
    let iis: IisResult = estimate_ch(&weighted, &fit.mixture, m, &mut rng).stage(Stage::Iis)?;

    let (mut log_p_f, note) = combine(log_p_tilde, iis.log_c);
    diagnostics.extend(note);
    if let Some(lc) = setup.log_c_pi {
        log_p_f -= lc;
    }
    let cov = if log_p_tilde.is_finite() {
        Some(analytical_cov(shifted_rel_var(&scaled, stride, log_p_tilde), iis.rel_var))
    } else {
        None
    };

    let ledger = Ledger { n_adam, n_burnin: chain.calls.burnin_total(), n: chain.calls.sampling, m: iis.calls };
    let n_total = problem.calls();
    if ledger.total() != n_total {
        return Err(Error::Sampler(format!(
            "call ledger {} disagrees with the limit-state counter {n_total}",
            ledger.total()
        ))
        .at(Stage::Combine));
    }
    let failures = chain.samples.iter().filter(|s| s.g <= 0.0).count();
    Ok(EstimateReport {
        p_f: log_p_f.exp(),
        log_p_f,
        p_tilde: log_p_tilde.exp(),
        log_p_tilde,
        c_h: iis.c(),
        log_c_h: iis.log_c,
        log_c_pi: setup.log_c_pi,
        cov,
        ledger,
        n_total,
        thinning: stride,
        n_s,
        ess_min,
        split_rule: iis.rule,
        gmm_components: fit.mixture.n_components(),
        accept_rate: chain.mean_accept(),
        step_size: chain.step_size,
        g_c: target.g_c(),
        gc_branch: target.gc_branch(),
        placement,
        adam_iterations: found.iterations,
        failure_fraction: failures as f64 / chain.samples.len() as f64,
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DensityModel, IndependentGaussian};
    use crate::limit_state::LimitStateKind;

    fn state(g: f64, log_pi: f64, log_p: f64) -> State {
        State { x: DVector::zeros(1), log_p, grad: DVector::zeros(1), log_pi, g }
    }

    #[test]
    fn shifted_estimate_cases() {
        let none = vec![state(1.0, 0.0, -1.0); 10];
        assert_eq!(shifted_estimate(&none), f64::NEG_INFINITY);
        let all = vec![state(-1.0, -2.0, -2.0); 10];
        assert!(shifted_estimate(&all).abs() < 1e-15);
        let half: Vec<State> = (0..10)
            .map(|i| if i % 2 == 0 { state(-1.0, -2.0, -2.0 + 0.5f64.ln()) } else { state(1.0, -2.0, -3.0) })
            .collect();
        assert!(shifted_estimate(&half).abs() < 1e-15);
    }

    #[test]
    fn combination_and_cov() {
        let (lp, note) = combine(0.5f64.ln(), 2e-6f64.ln());
        assert!((lp.exp() - 1e-6).abs() < 1e-20 && note.is_none());
        assert_eq!(combine(0.0, -3.0).0, -3.0);
        let (lp, note) = combine(f64::NEG_INFINITY, -3.0);
        assert_eq!(lp.exp(), 0.0);
        assert!(note.is_some());
        assert_eq!(analytical_cov(0.0, 0.04), 0.2);
        assert_eq!(analytical_cov(0.09, 0.0), 0.3);
    }

    fn linear_setup(d: usize, beta: f64) -> ProblemSetup {
        ProblemSetup {
            model: Arc::new(DensityModel::IndependentGaussian(IndependentGaussian::standard(d).unwrap())),
            limit_state: LimitStateProblem::new(LimitStateKind::Linear { offset: beta, coeffs: vec![-1.0 / (d as f64).sqrt(); d] }, d).unwrap(),
            transform: None,
            mean: DVector::zeros(d),
            adam_start: None,
            log_c_pi: None,
        }
    }

    #[test]
    fn ledger_matches_counter_exactly() {
        let setup = linear_setup(2, 3.5);
        let config = AstpaConfig::new(AstpaParams::new(0.3, 10.0).unwrap(), SamplerKind::Qnp, Budget::total(1500));
        let r = run_astpa(&setup, &config, 1).unwrap();
        assert_eq!(r.n_total, 1500);
        assert_eq!(r.ledger.total(), 1500);
        assert!(r.p_f > 0.0 && r.cov.is_some());
    }
}
