//! Hamiltonian MCMC: leapfrog integration, mass matrices, dual-averaging
//! step-size adaptation, and effective-sample-size utilities.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::density::std_normal_vec;
use crate::target::{State, Target};
use crate::{Error, Result};

/// Energy error beyond which a trajectory is treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;
/// Consecutive rejections after which a chain is declared stuck.
pub const STUCK_WINDOW: usize = 100;
pub const TARGET_ACCEPT: f64 = 0.65;
pub const INITIAL_STEP: f64 = 0.1;

/// Covariance `M` of the Gaussian momenta, stored by what the integrator needs:
/// `M⁻¹` and a factor `S` with `S Sᵀ = M`.
#[derive(Debug, Clone, PartialEq)]
pub enum MassMatrix {
    Identity(usize),
    Diagonal { inv: DVector<f64> },
    Dense { inv: DMatrix<f64>, factor: DMatrix<f64> },
}

impl MassMatrix {
    pub fn identity(d: usize) -> Self {
        MassMatrix::Identity(d)
    }

    pub fn from_diagonal(m: DVector<f64>) -> Result<Self> {
        if m.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(MassMatrix::Diagonal { inv: m.map(|v| 1.0 / v) })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let inv = chol.inverse();
        Ok(MassMatrix::Dense { inv: symmetrize(&inv), factor: chol.unpack() })
    }

    /// Mass matrix `M = W⁻¹` given `W`.
    pub fn from_inverse(w: &DMatrix<f64>) -> Result<Self> {
        let l = w.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        // W = L Lᵀ  ⇒  M = L⁻ᵀ L⁻¹ and S = L⁻ᵀ
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(w.nrows(), w.ncols()))
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(MassMatrix::Dense { inv: symmetrize(w), factor: l_inv.transpose() })
    }

    pub fn from_inverse_diagonal(w: &DVector<f64>) -> Result<Self> {
        if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(MassMatrix::Diagonal { inv: w.clone() })
    }

    pub fn dim(&self) -> usize {
        match self {
            MassMatrix::Identity(d) => *d,
            MassMatrix::Diagonal { inv } => inv.len(),
            MassMatrix::Dense { inv, .. } => inv.nrows(),
        }
    }

    /// `M⁻¹ z`
    pub fn apply_inv(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            MassMatrix::Identity(_) => z.clone(),
            MassMatrix::Diagonal { inv } => z.component_mul(inv),
            MassMatrix::Dense { inv, .. } => inv * z,
        }
    }

    /// `½ zᵀ M⁻¹ z`
    pub fn kinetic(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&self.apply_inv(z))
    }

    /// `S u` with `S Sᵀ = M`: maps standard normal noise to momentum.
    pub fn scale_noise(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            MassMatrix::Identity(_) => u.clone(),
            MassMatrix::Diagonal { inv } => u.component_div(&inv.map(f64::sqrt)),
            MassMatrix::Dense { factor, .. } => factor * u,
        }
    }

    pub fn sample_momentum(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        self.scale_noise(&std_normal_vec(self.dim(), rng))
    }

    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        match self {
            MassMatrix::Identity(d) => DMatrix::identity(*d, *d),
            MassMatrix::Diagonal { inv } => DMatrix::from_diagonal(inv),
            MassMatrix::Dense { inv, .. } => inv.clone(),
        }
    }

    pub fn noise_factor(&self) -> DMatrix<f64> {
        match self {
            MassMatrix::Identity(d) => DMatrix::identity(*d, *d),
            MassMatrix::Diagonal { inv } => DMatrix::from_diagonal(&inv.map(|v| 1.0 / v.sqrt())),
            MassMatrix::Dense { factor, .. } => factor.clone(),
        }
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Generic leapfrog: `z += ε/2·K(∇)`, `x += ε·D(z)`, `z += ε/2·K(∇)`, repeated `steps` times.
///
/// The gradient of `start` is reused, so the trajectory costs `steps` target evaluations.
pub(crate) fn integrate(
    target: &dyn Target,
    start: &State,
    mut z: DVector<f64>,
    eps: f64,
    steps: usize,
    kick: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    drift: &dyn Fn(&DVector<f64>) -> DVector<f64>,
) -> (State, DVector<f64>) {
    let mut state = start.clone();
    for _ in 0..steps {
        z += kick(&state.grad) * (0.5 * eps);
        let x = &state.x + drift(&z) * eps;
        state = target.evaluate(&x);
        z += kick(&state.grad) * (0.5 * eps);
    }
    (state, z)
}

/// Standard leapfrog with mass matrix `M`.
pub fn leapfrog(
    target: &dyn Target,
    start: &State,
    z: DVector<f64>,
    eps: f64,
    steps: usize,
    mass: &MassMatrix,
) -> (State, DVector<f64>) {
    integrate(target, start, z, eps, steps, &|g| g.clone(), &|z| mass.apply_inv(z))
}

/// Metropolis acceptance probability from the energy change; divergent or
/// non-finite energies give zero.
pub(crate) fn accept_prob(h0: f64, h1: f64) -> (f64, bool) {
    let dh = h1 - h0;
    if !dh.is_finite() || dh.abs() > DIVERGENCE_THRESHOLD {
        return (0.0, true);
    }
    ((-dh).exp().min(1.0), false)
}

/// Outcome of one Metropolis-corrected trajectory.
#[derive(Debug, Clone)]
pub(crate) struct Step {
    pub state: State,
    pub accept_prob: f64,
    pub accepted: bool,
    pub divergent: bool,
}

/// One HMC transition with momentum `z` already drawn.
pub(crate) fn metropolis(
    current: &State,
    proposal: State,
    h0: f64,
    h1: f64,
    rng: &mut dyn RngCore,
) -> Step {
    let (alpha, divergent) = if proposal.is_finite() { accept_prob(h0, h1) } else { (0.0, true) };
    let u: f64 = rng.random();
    if u < alpha {
        Step { state: proposal, accept_prob: alpha, accepted: true, divergent }
    } else {
        Step { state: current.clone(), accept_prob: alpha, accepted: false, divergent }
    }
}

/// Hoffman–Gelman dual averaging of `ln ε` toward a target acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps_bar: f64,
    t: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(eps0: f64, delta: f64) -> Self {
        DualAveraging { mu: (10.0 * eps0).ln(), h_bar: 0.0, log_eps_bar: 0.0, t: 0.0, delta }
    }

    /// Feeds one acceptance probability and returns the next step size.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.delta - accept_prob);
        let log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    /// The averaged step size used once adaptation stops.
    pub fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Doubling/halving search from `eps0` until the one-step log acceptance ratio
/// crosses `ln 0.5`. `trial(ε)` runs one step and returns `-ΔH`; each call is one
/// target evaluation. Returns the step size and the number of trials.
pub(crate) fn find_initial_step(eps0: f64, trial: &mut dyn FnMut(f64) -> f64) -> (f64, u64) {
    let ln_half = 0.5f64.ln();
    let clean = |r: f64| if r.is_nan() { f64::NEG_INFINITY } else { r };
    let mut eps = eps0;
    let mut r = clean(trial(eps));
    let mut calls = 1;
    let dir = if r > ln_half { 1.0 } else { -1.0 };
    while dir * r > dir * ln_half && calls < 60 {
        let next = eps * 2f64.powf(dir);
        if !(1e-12..=1e4).contains(&next) {
            break;
        }
        eps = next;
        r = clean(trial(eps));
        calls += 1;
    }
    (eps, calls)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSize {
    /// Initial search followed by dual averaging over the first `2·N_BurnIn` iterations.
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub step_size: StepSize,
    pub n_leapfrog: usize,
    pub mass: MassMatrix,
    pub n_burnin: usize,
    /// Post-burn-in iterations `N`.
    pub n_samples: usize,
    pub target_accept: f64,
}

impl SamplerConfig {
    pub fn new(d: usize, n_burnin: usize, n_samples: usize) -> Self {
        SamplerConfig {
            step_size: StepSize::Adaptive,
            n_leapfrog: 1,
            mass: MassMatrix::identity(d),
            n_burnin,
            n_samples,
            target_accept: TARGET_ACCEPT,
        }
    }

    pub(crate) fn validate(&self, d: usize) -> Result<()> {
        if self.n_leapfrog == 0 || self.n_samples == 0 {
            return Err(Error::InvalidParameter("need at least one leapfrog step and one sample".into()));
        }
        if self.mass.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.mass.dim() });
        }
        if let StepSize::Fixed(e) = self.step_size {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::InvalidParameter(format!("step size must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

/// Model calls spent by a chain, split the way the estimator ledger needs them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCalls {
    /// Initial step-size searches.
    pub search: u64,
    pub burnin: u64,
    pub sampling: u64,
}

impl ChainCalls {
    /// Calls attributed to `N_BurnIn` in the ledger.
    pub fn burnin_total(&self) -> u64 {
        self.search + self.burnin
    }

    pub fn total(&self) -> u64 {
        self.search + self.burnin + self.sampling
    }
}

/// Output of a chain: post-burn-in states and diagnostics.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub samples: Vec<State>,
    /// Acceptance probability of every iteration, burn-in included.
    pub accept_probs: Vec<f64>,
    pub accepted: Vec<bool>,
    pub step_size: f64,
    pub calls: ChainCalls,
    pub divergences: usize,
    pub n_burnin: usize,
    /// Mass matrix used after burn-in.
    pub mass: MassMatrix,
}

impl ChainRun {
    pub fn sample_matrix(&self) -> DMatrix<f64> {
        let d = self.samples.first().map_or(0, |s| s.x.len());
        DMatrix::from_fn(self.samples.len(), d, |i, j| self.samples[i].x[j])
    }

    pub fn mean_accept(&self) -> f64 {
        let post = &self.accept_probs[self.n_burnin..];
        post.iter().sum::<f64>() / post.len().max(1) as f64
    }

    pub fn ess_min(&self) -> f64 {
        ess_min(&self.sample_matrix())
    }
}

/// Tracks consecutive rejections.
pub(crate) struct StuckGuard(usize);

impl StuckGuard {
    pub fn new() -> Self {
        StuckGuard(0)
    }

    pub fn record(&mut self, accepted: bool, iteration: usize) -> Result<()> {
        self.0 = if accepted { 0 } else { self.0 + 1 };
        if self.0 >= STUCK_WINDOW {
            return Err(Error::Sampler(format!(
                "no proposal accepted in {STUCK_WINDOW} consecutive iterations (at iteration {iteration})"
            )));
        }
        Ok(())
    }
}

/// Standard HMCMC from a cached initial state. The initial evaluation is not
/// charged to the chain.
pub fn hmcmc_chain(target: &dyn Target, init: State, config: &SamplerConfig, rng: &mut dyn RngCore) -> Result<ChainRun> {
    let d = target.dim();
    config.validate(d)?;
    if !init.is_finite() {
        return Err(Error::Sampler("initial state has a non-finite log-target".into()));
    }
    let mass = &config.mass;
    let steps = config.n_leapfrog;
    let mut calls = ChainCalls::default();
    let hamiltonian = |s: &State, z: &DVector<f64>| -s.log_p + mass.kinetic(z);

    let (mut eps, mut da) = match config.step_size {
        StepSize::Fixed(e) => (e, None),
        StepSize::Adaptive => {
            let (e, n) = find_initial_step(INITIAL_STEP, &mut |e| {
                let z = mass.sample_momentum(rng);
                let h0 = hamiltonian(&init, &z);
                let (p, z1) = leapfrog(target, &init, z, e, 1, mass);
                h0 - hamiltonian(&p, &z1)
            });
            calls.search = n;
            (e, Some(DualAveraging::new(e, config.target_accept)))
        }
    };
    let n_adapt = 2 * config.n_burnin;
    let total = config.n_burnin + config.n_samples;
    let mut state = init;
    let mut run = ChainRun {
        samples: Vec::with_capacity(config.n_samples),
        accept_probs: Vec::with_capacity(total),
        accepted: Vec::with_capacity(total),
        step_size: eps,
        calls,
        divergences: 0,
        n_burnin: config.n_burnin,
        mass: mass.clone(),
    };
    let mut guard = StuckGuard::new();
    for it in 0..total {
        let z = mass.sample_momentum(rng);
        let h0 = hamiltonian(&state, &z);
        let (prop, z1) = leapfrog(target, &state, z, eps, steps, mass);
        let h1 = hamiltonian(&prop, &z1);
        let step = metropolis(&state, prop, h0, h1, rng);
        if it < config.n_burnin {
            run.calls.burnin += steps as u64;
        } else {
            run.calls.sampling += steps as u64;
        }
        if let Some(da_state) = da.as_mut() {
            if it < n_adapt {
                eps = da_state.update(step.accept_prob);
                if it + 1 == n_adapt || it + 1 == total {
                    eps = da_state.final_step();
                    da = None;
                }
            }
        }
        run.divergences += step.divergent as usize;
        run.accept_probs.push(step.accept_prob);
        run.accepted.push(step.accepted);
        guard.record(step.accepted, it)?;
        state = step.state;
        if it >= config.n_burnin {
            run.samples.push(state.clone());
        }
    }
    run.step_size = eps;
    Ok(run)
}

/// Autocovariance at `lag` with divisor `n`.
fn autocov(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for t in 0..n - lag {
        s += (x[t] - mean) * (x[t + lag] - mean);
    }
    s / n as f64
}

/// Effective sample size of a scalar chain, using Geyer's initial monotone
/// positive sequence to truncate the autocorrelation sum.
pub fn ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let g0 = autocov(x, mean, 0);
    if !(g0 > 0.0) {
        return 1.0;
    }
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocov(x, mean, 2 * m) + autocov(x, mean, 2 * m + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += pair;
        prev_pair = pair;
        m += 1;
    }
    let tau = (2.0 * tau - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Smallest per-coordinate ESS of an `n × d` sample matrix.
pub fn ess_min(samples: &DMatrix<f64>) -> f64 {
    (0..samples.ncols())
        .map(|j| ess(samples.column(j).as_slice()))
        .fold(f64::INFINITY, f64::min)
}

/// Thinning stride `⌊N / (4·ESS_min)⌋` clamped to `[3, 30]`.
pub fn thinning_stride(n: usize, ess_min: f64) -> usize {
    let j = (n as f64 / (4.0 * ess_min)).floor();
    if j.is_nan() {
        return 30;
    }
    (j.max(3.0).min(30.0)) as usize
}
