//! Quasi-Newton preconditioned HMCMC.
//!
//! During burn-in a BFGS estimate `W` of the inverse Hessian of `U = -ln h̃`
//! preconditions the dynamics skew-symmetrically (`z += ε/2·W∇`, `x += ε·W z`,
//! identity mass). Afterwards the chain runs standard HMCMC with the fixed mass
//! matrix `M = W⁻¹`. With a single leapfrog step both phases are preconditioned
//! MALA, which [`verify_mala_equivalence`] checks numerically.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::density::std_normal_vec;
use crate::hmc::{
    find_initial_step, integrate, leapfrog, metropolis, ChainCalls, ChainRun, DualAveraging, MassMatrix,
    SamplerConfig, StepSize, StuckGuard, INITIAL_STEP,
};
use crate::target::{State, Target};
use crate::{Error, Result};

pub const CURVATURE_THRESHOLD: f64 = 10.0;
pub const REVERT_THRESHOLD: f64 = 0.01;
/// Dimension above which the diagonal inverse Hessian is the default.
pub const DIAGONAL_ABOVE: usize = 150;
const DIAGONAL_FLOOR: f64 = 1e-8;

/// Inverse Hessian estimate `W`.
#[derive(Debug, Clone, PartialEq)]
pub enum InverseHessian {
    Identity(usize),
    Dense(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl InverseHessian {
    pub fn dim(&self) -> usize {
        match self {
            InverseHessian::Identity(d) => *d,
            InverseHessian::Dense(w) => w.nrows(),
            InverseHessian::Diagonal(w) => w.len(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            InverseHessian::Identity(_) => v.clone(),
            InverseHessian::Dense(w) => w * v,
            InverseHessian::Diagonal(w) => v.component_mul(w),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            InverseHessian::Identity(d) => DMatrix::identity(*d, *d),
            InverseHessian::Dense(w) => w.clone(),
            InverseHessian::Diagonal(w) => DMatrix::from_diagonal(w),
        }
    }

    /// Mass matrix `M = W⁻¹`; a failed factorization falls back to the
    /// (floored) diagonal of `W`.
    pub fn to_mass(&self) -> MassMatrix {
        match self {
            InverseHessian::Identity(d) => MassMatrix::identity(*d),
            InverseHessian::Diagonal(w) => MassMatrix::from_inverse_diagonal(&w.map(|v| v.max(DIAGONAL_FLOOR)))
                .expect("floored diagonal is positive"),
            InverseHessian::Dense(w) => MassMatrix::from_inverse(w).unwrap_or_else(|_| {
                log::warn!("inverse Hessian is not positive definite; using its diagonal as M⁻¹");
                MassMatrix::from_inverse_diagonal(&w.diagonal().map(|v| v.max(DIAGONAL_FLOOR)))
                    .expect("floored diagonal is positive")
            }),
        }
    }
}

/// BFGS inverse-Hessian estimate with the curvature skip rule.
#[derive(Debug, Clone, PartialEq)]
pub struct BfgsState {
    w: InverseHessian,
    diagonal: bool,
    pub c_min: f64,
    pub updates: usize,
    pub skips: usize,
}

impl BfgsState {
    pub fn new(d: usize, diagonal: bool, c_min: f64) -> Self {
        BfgsState { w: InverseHessian::Identity(d), diagonal, c_min, updates: 0, skips: 0 }
    }

    pub fn from_matrix(w: DMatrix<f64>, c_min: f64) -> Self {
        BfgsState { w: InverseHessian::Dense(w), diagonal: false, c_min, updates: 0, skips: 0 }
    }

    pub fn w(&self) -> &InverseHessian {
        &self.w
    }

    /// Applies the BFGS update for the step `s` and gradient change `y` of `U`
    /// when `sᵀy > c_min`; returns whether it was applied.
    pub fn update(&mut self, s: &DVector<f64>, y: &DVector<f64>) -> bool {
        let sy = s.dot(y);
        if !(sy > self.c_min) || !sy.is_finite() {
            self.skips += 1;
            return false;
        }
        let rho = 1.0 / sy;
        let d = s.len();
        self.w = if self.diagonal {
            let w = match &self.w {
                InverseHessian::Diagonal(w) => w.clone(),
                _ => DVector::from_element(d, 1.0),
            };
            let wy = w.component_mul(y);
            let ywy = y.dot(&wy);
            let c = rho * rho * ywy + rho;
            let next = DVector::from_fn(d, |i, _| (w[i] - 2.0 * rho * s[i] * wy[i] + c * s[i] * s[i]).max(DIAGONAL_FLOOR));
            InverseHessian::Diagonal(next)
        } else {
            let w = self.w.to_matrix();
            let wy = &w * y;
            let ywy = y.dot(&wy);
            let mut next = w - (s * wy.transpose() + &wy * s.transpose()) * rho;
            next += s * s.transpose() * (rho * rho * ywy + rho);
            InverseHessian::Dense(crate::hmc::symmetrize(&next))
        };
        self.updates += 1;
        true
    }
}

/// Burn-in leapfrog: `z += ε/2·B∇`, `x += ε·B z`, `z += ε/2·B∇`, with `B` fixed.
pub fn leapfrog_burnin(
    target: &dyn Target,
    start: &State,
    z: DVector<f64>,
    eps: f64,
    steps: usize,
    b: &InverseHessian,
) -> (State, DVector<f64>) {
    integrate(target, start, z, eps, steps, &|g| b.apply(g), &|z| b.apply(z))
}

#[derive(Debug, Clone)]
pub struct QnpConfig {
    /// Leapfrog steps, burn-in/sample counts, step-size mode and target
    /// acceptance; its mass matrix is ignored.
    pub sampler: SamplerConfig,
    pub c_min: f64,
    pub diagonal: bool,
    pub revert_threshold: f64,
}

impl QnpConfig {
    pub fn new(d: usize, n_burnin: usize, n_samples: usize) -> Self {
        QnpConfig {
            sampler: SamplerConfig::new(d, n_burnin, n_samples),
            c_min: CURVATURE_THRESHOLD,
            diagonal: d > DIAGONAL_ABOVE,
            revert_threshold: REVERT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QnpDiagnostics {
    pub updates: usize,
    pub skips: usize,
    pub reverts: usize,
    pub diagonal: bool,
}

/// QNp-HMCMC from a cached initial state (not charged to the chain).
pub fn qnp_chain(target: &dyn Target, init: State, config: &QnpConfig, rng: &mut dyn RngCore) -> Result<(ChainRun, QnpDiagnostics)> {
    let d = target.dim();
    let cfg = &config.sampler;
    cfg.validate(d)?;
    if !init.is_finite() {
        return Err(Error::Sampler("initial state has a non-finite log-target".into()));
    }
    let steps = cfg.n_leapfrog;
    let n_adapt = 2 * cfg.n_burnin;
    let total = cfg.n_burnin + cfg.n_samples;
    let mut calls = ChainCalls::default();
    let mut bfgs = BfgsState::new(d, config.diagonal, config.c_min);
    let mut reverts = 0;
    let kinetic = |z: &DVector<f64>| 0.5 * z.dot(z);

    let (mut eps, mut da) = match cfg.step_size {
        StepSize::Fixed(e) => (e, None),
        StepSize::Adaptive => {
            let w = bfgs.w().clone();
            let (e, n) = find_initial_step(INITIAL_STEP, &mut |e| {
                let z = std_normal_vec(d, rng);
                let h0 = -init.log_p + kinetic(&z);
                let (p, z1) = leapfrog_burnin(target, &init, z, e, 1, &w);
                h0 - (-p.log_p + kinetic(&z1))
            });
            calls.search += n;
            (e, Some(DualAveraging::new(e, cfg.target_accept)))
        }
    };

    let mut state = init;
    let mut mass = MassMatrix::identity(d);
    let mut run = ChainRun {
        samples: Vec::with_capacity(cfg.n_samples),
        accept_probs: Vec::with_capacity(total),
        accepted: Vec::with_capacity(total),
        step_size: eps,
        calls,
        divergences: 0,
        n_burnin: cfg.n_burnin,
        mass: mass.clone(),
    };
    let mut guard = StuckGuard::new();
    for it in 0..total {
        if it == cfg.n_burnin {
            mass = bfgs.w().to_mass();
            // the sampling dynamics differ from the burn-in ones, so the step
            // size is searched and adapted afresh whenever W moved
            if bfgs.updates > 0 {
                if let (StepSize::Adaptive, true) = (cfg.step_size, it < n_adapt) {
                    let (e, n) = find_initial_step(eps, &mut |e| {
                        let z = mass.sample_momentum(rng);
                        let h0 = -state.log_p + mass.kinetic(&z);
                        let (p, z1) = leapfrog(target, &state, z, e, 1, &mass);
                        h0 - (-p.log_p + mass.kinetic(&z1))
                    });
                    run.calls.search += n;
                    eps = e;
                    da = Some(DualAveraging::new(e, cfg.target_accept));
                }
            }
        }
        let step = if it < cfg.n_burnin {
            let w = bfgs.w().clone();
            let z = std_normal_vec(d, rng);
            let h0 = -state.log_p + kinetic(&z);
            let (prop, z1) = leapfrog_burnin(target, &state, z, eps, steps, &w);
            let h1 = -prop.log_p + kinetic(&z1);
            let s = &prop.x - &state.x;
            let y = &state.grad - &prop.grad;
            let finite = prop.is_finite();
            let step = metropolis(&state, prop, h0, h1, rng);
            run.calls.burnin += steps as u64;
            // the update from a far-off proposal is computed inside the
            // trajectory but discarded when the proposal is nearly impossible
            if step.accept_prob < config.revert_threshold {
                reverts += 1;
            } else if finite {
                bfgs.update(&s, &y);
            } else {
                bfgs.skips += 1;
            }
            step
        } else {
            let z = mass.sample_momentum(rng);
            let h0 = -state.log_p + mass.kinetic(&z);
            let (prop, z1) = leapfrog(target, &state, z, eps, steps, &mass);
            let h1 = -prop.log_p + mass.kinetic(&z1);
            run.calls.sampling += steps as u64;
            metropolis(&state, prop, h0, h1, rng)
        };
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
        if it >= cfg.n_burnin {
            run.samples.push(state.clone());
        }
    }
    if cfg.n_burnin >= total {
        mass = bfgs.w().to_mass();
    }
    run.step_size = eps;
    run.mass = mass;
    let diag = QnpDiagnostics { updates: bfgs.updates, skips: bfgs.skips, reverts, diagonal: config.diagonal };
    Ok((run, diag))
}

/// Preconditioned MALA proposal `x + ε²/2·A∇ln h̃(x) + ε·S u` with `S Sᵀ = A`.
pub fn mala_proposal(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    eps: f64,
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    x + a * grad * (0.5 * eps * eps) + s * u * eps
}

/// Metropolis–Hastings acceptance of the preconditioned MALA move `from → to`
/// with proposal covariance `ε² A`.
pub fn mala_acceptance(from: &State, to: &State, eps: f64, a: &DMatrix<f64>) -> Result<f64> {
    let chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let log_q = |x1: &DVector<f64>, x0: &State| {
        let r = x1 - (&x0.x + a * &x0.grad * (0.5 * eps * eps));
        -0.5 * r.dot(&chol.solve(&r)) / (eps * eps)
    };
    let log_r = to.log_p + log_q(&from.x, to) - from.log_p - log_q(&to.x, from);
    Ok(if log_r.is_nan() { 0.0 } else { log_r.exp().min(1.0) })
}

/// Which single-step QNp phase to compare.
#[derive(Debug, Clone, PartialEq)]
pub enum QnpPhase {
    /// `A = W M⁻¹ W`
    BurnIn { w: DMatrix<f64>, mass: DMatrix<f64> },
    /// `A = M⁻¹`
    Sampling { mass: DMatrix<f64> },
}

/// Differences between single-step QNp-HMCMC and the equivalent preconditioned
/// MALA under matched noise `u` (the momentum is `z = C u`, `M = C Cᵀ`).
///
/// Returns the ∞-norm difference of the proposals and the absolute difference
/// of the acceptance probabilities.
pub fn verify_mala_equivalence(
    target: &dyn Target,
    start: &State,
    eps: f64,
    phase: &QnpPhase,
    u: &DVector<f64>,
) -> Result<(f64, f64)> {
    let (b, mass) = match phase {
        QnpPhase::BurnIn { w, mass } => (w.clone(), mass.clone()),
        QnpPhase::Sampling { mass } => (DMatrix::identity(mass.nrows(), mass.ncols()), mass.clone()),
    };
    let c = mass.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
    let c_inv_t = c.clone().try_inverse().ok_or(Error::NotPositiveDefinite)?.transpose();
    let m_inv = &c_inv_t * c_inv_t.transpose();
    let a = &b * &m_inv * &b;
    let s = &b * &c_inv_t;

    let z = &c * u;
    let kinetic = |z: &DVector<f64>| 0.5 * z.dot(&(&m_inv * z));
    let h0 = -start.log_p + kinetic(&z);
    let (hmc, z1) = integrate(target, start, z, eps, 1, &|g| &b * g, &|z| &b * (&m_inv * z));
    let h1 = -hmc.log_p + kinetic(&z1);
    let (alpha_hmc, _) = crate::hmc::accept_prob(h0, h1);

    let mala_x = mala_proposal(&start.x, &start.grad, eps, &a, &s, u);
    let alpha_mala = mala_acceptance(start, &hmc, eps, &a)?;
    Ok(((mala_x - &hmc.x).amax(), (alpha_hmc - alpha_mala).abs()))
}
