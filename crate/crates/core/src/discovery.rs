//! Rare-event domain discovery: Adam on `-ln h̃` to find the sampler's start.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::target::{AstpaTarget, State, Target};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once the L2 norm of an update falls below this.
    pub tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, max_iter: 500, tol: 1e-7 }
    }
}

impl AdamConfig {
    pub fn with_max_iter(max_iter: usize) -> Self {
        AdamConfig { max_iter, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter("Adam needs a positive learning rate and at least one iteration".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter("Adam decay rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discovery {
    /// Final iterate with its evaluation, ready to start a chain.
    pub state: State,
    /// Iterates, the starting point included.
    pub trace: Vec<DVector<f64>>,
    pub iterations: usize,
    /// Target evaluations made here; the starting point's is not included.
    pub calls: u64,
    pub converged: bool,
}

/// Minimizes `-ln p` with Adam from an already evaluated starting state.
///
/// Each iteration costs one evaluation, at the new iterate; its gradient drives
/// the next update and the last one is handed to the sampler. If an iterate
/// leaves the support or the evaluation is non-finite, the search stops at the
/// previous iterate.
pub fn discover(target: &dyn Target, init: State, config: &AdamConfig) -> Result<Discovery> {
    config.validate()?;
    if !init.is_finite() {
        return Err(Error::NonFinite);
    }
    let d = target.dim();
    let mut m = DVector::<f64>::zeros(d);
    let mut v = DVector::<f64>::zeros(d);
    let mut state = init;
    let mut trace = vec![state.x.clone()];
    let mut calls = 0;
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=config.max_iter {
        // gradient of the objective -ln p
        let g = -&state.grad;
        m = &m * config.beta1 + &g * (1.0 - config.beta1);
        v = &v * config.beta2 + g.component_mul(&g) * (1.0 - config.beta2);
        let m_hat = &m / (1.0 - config.beta1.powi(t as i32));
        let v_hat = &v / (1.0 - config.beta2.powi(t as i32));
        let update = m_hat.zip_map(&v_hat, |a, b| -config.learning_rate * a / (b.sqrt() + config.epsilon));
        let next = target.evaluate(&(&state.x + &update));
        calls += 1;
        iterations = t;
        if !next.is_finite() {
            log::warn!("Adam left the target's support at iteration {t}; keeping the previous iterate");
            break;
        }
        state = next;
        trace.push(state.x.clone());
        if update.norm() < config.tol {
            converged = true;
            break;
        }
    }
    Ok(Discovery { state, trace, iterations, calls, converged })
}

/// Evaluates `x0` (one call, counted in `calls`) and runs [`discover`] from it.
pub fn discover_from(target: &dyn Target, x0: &DVector<f64>, config: &AdamConfig) -> Result<Discovery> {
    crate::density::check_input(target.dim(), x0)?;
    let mut out = discover(target, target.evaluate(x0), config)?;
    out.calls += 1;
    Ok(out)
}

/// Half-width of the band of logistic arguments regarded as near the surface.
pub const PLACEMENT_BAND: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Placement {
    Ok,
    /// Rebuild the target with these parameters and rerun Adam from its result.
    RelaxNeeded { sigma: f64, q: f64 },
}

/// Whether Adam ended in, or close to, the rare-event domain.
pub fn placement_check(target: &AstpaTarget, state: &State) -> Placement {
    placement_verdict(state.g, target.z(state.g), target.params().sigma, target.params().q)
}

pub fn placement_verdict(g: f64, z: f64, sigma: f64, q: f64) -> Placement {
    if g <= 0.0 || z.abs() <= PLACEMENT_BAND {
        Placement::Ok
    } else {
        Placement::RelaxNeeded { sigma: (sigma - 0.05).max(0.05), q: 2.0 * q }
    }
}
