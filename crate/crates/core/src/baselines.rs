//! Reference estimators: crude Monte Carlo and subset simulation with
//! component-wise Metropolis–Hastings.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::hmc::{hmcmc_chain, SamplerConfig};
use crate::limit_state::LimitStateProblem;
use crate::target::{DensityTarget, Target};
use crate::{Error, Result};

/// Map from a working space to the limit state's space.
pub type SpaceMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A density to draw from plus the map taking its draws to the limit state's space.
#[derive(Clone)]
pub struct WorkingSpace {
    pub density: Arc<dyn LogDensity>,
    pub to_problem: Option<SpaceMap>,
}

impl std::fmt::Debug for WorkingSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkingSpace").field("density", &self.density).field("mapped", &self.to_problem.is_some()).finish()
    }
}

impl WorkingSpace {
    pub fn new(density: Arc<dyn LogDensity>) -> Self {
        WorkingSpace { density, to_problem: None }
    }

    fn map(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.to_problem {
            Some(f) => f(u),
            None => u.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub p: f64,
    /// `√((1 − p)/(n p))`; `None` without failures.
    pub cov: Option<f64>,
    pub failures: u64,
    pub n: u64,
    pub calls: u64,
    /// False when the draws came from a Markov chain and are correlated.
    pub iid: bool,
}

pub fn mc_cov(p: f64, n: u64) -> Option<f64> {
    (p > 0.0).then(|| ((1.0 - p) / (n as f64 * p)).sqrt())
}

const MC_CHUNK: usize = 100_000;

/// `n` draws from the working density: direct when it has a sampler, otherwise
/// the post-burn-in states of a standard HMCMC chain started at the origin
/// (burn-in `n/10`, at least 100; density evaluations are not model calls).
/// The flag tells whether the draws are independent.
pub fn working_draws(space: &WorkingSpace, n: usize, rng: &mut dyn RngCore) -> Result<(Vec<DVector<f64>>, bool)> {
    match space.density.sample(n, rng) {
        Ok(x) => Ok((x, true)),
        Err(Error::NoDirectSampler(_)) => {
            let d = space.density.dim();
            let target = DensityTarget(space.density.as_ref());
            let init = target.evaluate(&DVector::zeros(d));
            let chain = hmcmc_chain(&target, init, &SamplerConfig::new(d, (n / 10).max(100), n), rng)?;
            Ok((chain.samples.into_iter().map(|s| s.x).collect(), false))
        }
        Err(e) => Err(e),
    }
}

/// Crude Monte Carlo with `n` draws (see [`working_draws`] for densities
/// without a direct sampler).
pub fn crude_mc(space: &WorkingSpace, problem: &LimitStateProblem, n: u64, rng: &mut dyn RngCore) -> Result<McResult> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one Monte Carlo draw".into()));
    }
    let before = problem.calls();
    // a zero-size request only probes for a direct sampler
    let iid = space.density.sample(0, rng).is_ok();
    let chunk = if iid { MC_CHUNK } else { n as usize };
    let mut failures = 0u64;
    let mut left = n as usize;
    while left > 0 {
        let (draws, _) = working_draws(space, left.min(chunk), rng)?;
        for x in &draws {
            if problem.indicator(&space.map(x))? {
                failures += 1;
            }
        }
        left -= draws.len();
    }
    let p = failures as f64 / n as f64;
    Ok(McResult { p, cov: mc_cov(p, n), failures, n, calls: problem.calls() - before, iid })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SusConfig {
    /// Samples per level.
    pub n: usize,
    pub p0: f64,
    /// Width of the uniform component-wise proposal.
    pub width: f64,
    pub max_levels: usize,
}

impl SusConfig {
    pub fn new(n: usize) -> Self {
        SusConfig { n, p0: 0.1, width: 2.0, max_levels: 50 }
    }

    fn validate(&self) -> Result<()> {
        let seeds = self.n as f64 * self.p0;
        if !(self.p0 > 0.0 && self.p0 < 1.0) || (seeds - seeds.round()).abs() > 1e-9 || seeds < 1.0 {
            return Err(Error::InvalidParameter(format!("n·p0 must be a positive integer, got {seeds}")));
        }
        if (1.0 / self.p0 - (1.0 / self.p0).round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter("1/p0 must be an integer chain length".into()));
        }
        if !(self.width > 0.0) || self.max_levels == 0 {
            return Err(Error::InvalidParameter("proposal width and level cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusLevel {
    /// Intermediate threshold (0 for the final level).
    pub threshold: f64,
    /// Conditional probability estimated at this level.
    pub probability: f64,
    /// Fraction of chain moves accepted while populating this level (1 for the first).
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusResult {
    pub p: f64,
    pub levels: Vec<SusLevel>,
    pub calls: u64,
}

/// Lowest tolerated acceptance rate of the conditional chains.
pub const MIN_ACCEPTANCE: f64 = 0.01;

/// Subset simulation; first-level draws come from the working space's direct sampler.
pub fn sus(space: &WorkingSpace, problem: &LimitStateProblem, config: &SusConfig, rng: &mut dyn RngCore) -> Result<SusResult> {
    config.validate()?;
    let density = space.density.as_ref();
    let before = problem.calls();
    let n = config.n;
    let n_seeds = (n as f64 * config.p0).round() as usize;
    let chain_len = (1.0 / config.p0).round() as usize;

    let (mut xs, _) = working_draws(space, n, rng)?;
    let mut gs = Vec::with_capacity(n);
    for x in &xs {
        gs.push(problem.evaluate(&space.map(x))?.0);
    }
    let mut levels = Vec::new();
    let mut acceptance = 1.0;
    loop {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| gs[a].total_cmp(&gs[b]));
        let failures = gs.iter().filter(|g| **g <= 0.0).count();
        if failures >= n_seeds {
            levels.push(SusLevel { threshold: 0.0, probability: failures as f64 / n as f64, acceptance });
            break;
        }
        if levels.len() + 1 >= config.max_levels {
            return Err(Error::Sampler(format!("subset simulation did not reach the failure domain in {} levels", config.max_levels)));
        }
        // midpoint between the seeds' largest value and the next one
        let threshold = 0.5 * (gs[order[n_seeds - 1]] + gs[order[n_seeds]]);
        levels.push(SusLevel { threshold, probability: config.p0, acceptance });

        let mut next_x = Vec::with_capacity(n);
        let mut next_g = Vec::with_capacity(n);
        let mut accepted = 0usize;
        let mut moves = 0usize;
        for &s in &order[..n_seeds] {
            let mut x = xs[s].clone();
            let mut g = gs[s];
            let mut log_p = density.eval_unchecked(&x).log_p;
            next_x.push(x.clone());
            next_g.push(g);
            for _ in 1..chain_len {
                let mut cand = x.clone();
                let mut cand_lp = log_p;
                for i in 0..cand.len() {
                    let old = cand[i];
                    cand[i] = old + config.width * (rng.random::<f64>() - 0.5);
                    let lp = density.eval_unchecked(&cand).log_p;
                    if lp.is_finite() && rng.random::<f64>().ln() < lp - cand_lp {
                        cand_lp = lp;
                    } else {
                        cand[i] = old;
                    }
                }
                moves += 1;
                if cand != x {
                    let gc = problem.evaluate(&space.map(&cand))?.0;
                    if gc <= threshold {
                        x = cand;
                        g = gc;
                        log_p = cand_lp;
                        accepted += 1;
                    }
                }
                next_x.push(x.clone());
                next_g.push(g);
            }
        }
        acceptance = accepted as f64 / moves.max(1) as f64;
        if acceptance < MIN_ACCEPTANCE {
            return Err(Error::Sampler(format!(
                "subset simulation stagnated at level {}: acceptance {acceptance:.4}",
                levels.len()
            )));
        }
        xs = next_x;
        gs = next_g;
    }
    let p = levels.iter().map(|l| l.probability).product();
    Ok(SusResult { p, levels, calls: problem.calls() - before })
}
