//! The approximate sampling target `h̃(x) = ℓ(g(x)) · π(x)`.
//!
//! `ℓ` is a logistic CDF in `g / g_c` with dispersion `σ`, shifted so that
//! `ℓ(0) = p`. Everything is evaluated in log space.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::density::{check_input, LogDensity};
use crate::limit_state::LimitStateProblem;
use crate::special::{sigmoid, softplus};
use crate::transform::BoundSpec;
use crate::{Error, Result};

/// Percentile of the logistic placed on the limit-state surface.
pub const PERCENTILE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AstpaParams {
    /// Likelihood dispersion factor.
    pub sigma: f64,
    /// Scaling constant for `g_c`.
    pub q: f64,
}

impl AstpaParams {
    pub fn new(sigma: f64, q: f64) -> Result<Self> {
        if !(sigma > 0.0) || !(q > 0.0) || !sigma.is_finite() || !q.is_finite() {
            return Err(Error::InvalidParameter(format!("need σ > 0 and q > 0, got σ={sigma}, q={q}")));
        }
        if !(0.1..=0.6).contains(&sigma) || !(10.0..=20.0).contains(&q) {
            log::warn!("σ={sigma}, q={q} outside the recommended ranges [0.1, 0.6] and [10, 20]");
        }
        Ok(AstpaParams { sigma, q })
    }
}

/// Logistic location `μ_g` placing the percentile `p` on `g = 0`.
pub fn mu_g(sigma: f64, p: f64) -> f64 {
    -(3f64.sqrt() / PI) * sigma * (p / (1.0 - p)).ln()
}

/// Which branch of the `g_c` rule applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GcBranch {
    /// `g(μ_π)` was outside `[10, 20]` and got divided by `q`.
    Scaled,
    /// `g(μ_π) ∈ [10, 20]`, no scaling.
    InRange,
    /// `g(μ_π) ≤ 0`: the reference point is already a rare event, no scaling.
    NonPositive,
}

/// Scaling constant `g_c` from the limit-state value at the reference point.
pub fn compute_gc(g_at_mean: f64, q: f64) -> (f64, GcBranch) {
    if g_at_mean <= 0.0 {
        log::warn!("g(μ_π) = {g_at_mean} ≤ 0; using g_c = 1");
        (1.0, GcBranch::NonPositive)
    } else if g_at_mean > 20.0 || g_at_mean < 10.0 {
        (g_at_mean / q, GcBranch::Scaled)
    } else {
        (1.0, GcBranch::InRange)
    }
}

/// Evaluation of a sampling target at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub x: DVector<f64>,
    pub log_p: f64,
    pub grad: DVector<f64>,
    /// `log π(x)` of the original distribution (equal to `log_p` for plain densities).
    pub log_pi: f64,
    /// Limit-state value, `NaN` when there is none.
    pub g: f64,
}

impl State {
    pub fn is_finite(&self) -> bool {
        self.log_p.is_finite() && self.grad.iter().all(|v| v.is_finite())
    }
}

/// A differentiable log-density the samplers can run on.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &DVector<f64>) -> State;
}

/// Adapter running the samplers directly on a density.
#[derive(Debug, Clone)]
pub struct DensityTarget<D>(pub D);

impl<D: std::ops::Deref<Target = T> + Send + Sync, T: LogDensity + ?Sized> Target for DensityTarget<D> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn evaluate(&self, x: &DVector<f64>) -> State {
        let e = self.0.eval_unchecked(x);
        State { x: x.clone(), log_p: e.log_p, log_pi: e.log_p, grad: e.grad, g: f64::NAN }
    }
}

/// `h̃ = ℓ(g) · π` on the sampler's (unbounded) space.
#[derive(Debug, Clone)]
pub struct AstpaTarget {
    model: Arc<dyn LogDensity>,
    problem: Arc<LimitStateProblem>,
    transform: Option<BoundSpec>,
    params: AstpaParams,
    g_c: f64,
    g_at_mean: f64,
    branch: GcBranch,
    mu_g: f64,
    scale: f64,
    log_const: f64,
}

impl AstpaTarget {
    /// Builds the target and returns it with its evaluation at the reference point.
    ///
    /// `model` lives on the sampler's space; `transform` maps that space back to
    /// the space `problem` is defined on. `mean` is the reference point `μ_π` in
    /// the limit state's space. Computing `g(μ_π)` costs one model call.
    pub fn new(
        model: Arc<dyn LogDensity>,
        problem: Arc<LimitStateProblem>,
        transform: Option<BoundSpec>,
        params: AstpaParams,
        mean: &DVector<f64>,
    ) -> Result<(Self, State)> {
        let d = model.dim();
        if problem.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: problem.dim() });
        }
        if let Some(t) = &transform {
            if t.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: t.dim() });
            }
        }
        check_input(d, mean)?;
        let y0 = match &transform {
            Some(t) => t.to_unbounded(mean)?,
            None => mean.clone(),
        };
        let (g0, grad_g0) = problem.evaluate_unchecked(mean);
        if !g0.is_finite() {
            return Err(Error::NonFinite);
        }
        let (g_c, branch) = compute_gc(g0, params.q);
        let target = AstpaTarget {
            model,
            problem,
            transform,
            params,
            g_c,
            g_at_mean: g0,
            branch,
            mu_g: mu_g(params.sigma, PERCENTILE),
            scale: 3f64.sqrt() / PI * params.sigma,
            log_const: 0.0,
        };
        let state = target.assemble(y0, g0, grad_g0);
        Ok((target, state))
    }

    /// Same target multiplied by `exp(log_c)`; used to check scale invariance.
    pub fn scaled(&self, log_c: f64) -> Self {
        AstpaTarget { log_const: self.log_const + log_c, ..self.clone() }
    }

    pub fn params(&self) -> AstpaParams {
        self.params
    }

    pub fn g_c(&self) -> f64 {
        self.g_c
    }

    pub fn g_at_mean(&self) -> f64 {
        self.g_at_mean
    }

    pub fn gc_branch(&self) -> GcBranch {
        self.branch
    }

    pub fn mu_g(&self) -> f64 {
        self.mu_g
    }

    pub fn model(&self) -> &Arc<dyn LogDensity> {
        &self.model
    }

    pub fn problem(&self) -> &Arc<LimitStateProblem> {
        &self.problem
    }

    pub fn transform(&self) -> Option<&BoundSpec> {
        self.transform.as_ref()
    }

    /// Logistic argument `z` at limit-state value `g`.
    pub fn z(&self, g: f64) -> f64 {
        (g / self.g_c + self.mu_g) / self.scale
    }

    /// `ln ℓ(g)` and its derivative with respect to `g`.
    pub fn log_likelihood(&self, g: f64) -> (f64, f64) {
        let z = self.z(g);
        (-softplus(z), -sigmoid(z) / (self.g_c * self.scale))
    }

    /// Maps a sampler-space point to the limit state's space.
    pub fn to_problem_space(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.transform {
            Some(t) => t.to_bounded(y),
            None => y.clone(),
        }
    }

    /// `ln h̃(y)` with its gradient; one model call.
    pub fn eval(&self, y: &DVector<f64>) -> Result<State> {
        check_input(self.dim(), y)?;
        Ok(self.evaluate(y))
    }

    fn assemble(&self, y: DVector<f64>, g: f64, grad_g: DVector<f64>) -> State {
        let grad_g = match &self.transform {
            Some(t) => grad_g.component_mul(&t.jacobian_diag(&y)),
            None => grad_g,
        };
        let pi = self.model.eval_unchecked(&y);
        if pi.is_out_of_support() {
            return State { grad: DVector::zeros(y.len()), x: y, log_p: f64::NEG_INFINITY, log_pi: f64::NEG_INFINITY, g };
        }
        let (log_l, dlog_l) = self.log_likelihood(g);
        State {
            log_p: log_l + pi.log_p + self.log_const,
            grad: pi.grad + grad_g * dlog_l,
            log_pi: pi.log_p,
            g,
            x: y,
        }
    }
}

impl Target for AstpaTarget {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn evaluate(&self, y: &DVector<f64>) -> State {
        let x = self.to_problem_space(y);
        let (g, grad_g) = self.problem.evaluate_unchecked(&x);
        self.assemble(y.clone(), g, grad_g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DensityModel, IndependentLognormal, NealFunnel};
    use crate::limit_state::LimitStateKind;
    use crate::testing::fd_check;
    use crate::transform::{pushforward_log_density, Bound};
    use crate::density::DensityEval;
    use rand::Rng;

    fn funnel_target(sigma: f64, q: f64) -> AstpaTarget {
        let model: Arc<dyn LogDensity> = Arc::new(DensityModel::NealFunnel(NealFunnel::new(2).unwrap()));
        let problem = Arc::new(LimitStateProblem::new(LimitStateKind::Hyperspherical { r: 2.0 }, 2).unwrap());
        AstpaTarget::new(model, problem, None, AstpaParams::new(sigma, q).unwrap(), &DVector::zeros(2)).unwrap().0
    }

    #[test]
    fn mu_g_is_proportional_to_sigma() {
        for s in [0.1, 0.3, 0.6] {
            assert!((mu_g(s, 0.1) / s - 1.2112).abs() < 5e-4);
        }
    }

    #[test]
    fn gc_rule() {
        assert_eq!(compute_gc(1e4, 20.0), (500.0, GcBranch::Scaled));
        assert_eq!(compute_gc(15.0, 13.0), (1.0, GcBranch::InRange));
        assert_eq!(compute_gc(5.0, 10.0), (0.5, GcBranch::Scaled));
        assert_eq!(compute_gc(-2.0, 10.0), (1.0, GcBranch::NonPositive));
        assert_eq!(compute_gc(0.0, 10.0).0, 1.0);
        // g(0,0) = 36 - 4 = 32 for the funnel sphere → g_c = 32/20
        let t = funnel_target(0.1, 20.0);
        assert!((t.g_c() - 1.6).abs() < 1e-15);
        assert_eq!(t.problem().calls(), 1);
    }

    #[test]
    fn likelihood_values() {
        let t = funnel_target(0.1, 20.0);
        let (l0, _) = t.log_likelihood(0.0);
        assert!((l0.exp() - 0.1).abs() < 1e-15);
        let (lm, _) = t.log_likelihood(-1e6);
        assert_eq!(lm, 0.0);
        assert!(t.log_likelihood(1e9).0.is_finite());

        let direct = funnel_target(0.1, 15.0);
        assert_eq!(direct.g_c(), 32.0 / 15.0);
        let unit = AstpaTarget { g_c: 1.0, ..direct };
        let (l1, _) = unit.log_likelihood(1.0);
        let z = (1.0 + mu_g(0.1, 0.1)) / (3f64.sqrt() / PI * 0.1);
        assert!((z - 20.33).abs() < 0.01);
        // ln(1 + e^z) = z + ln(1 + e^{-z}) with e^{-z} ≈ 1.5e-9
        assert!((l1 + z + (-z).exp()).abs() < 1e-15);
    }

    #[test]
    fn likelihood_is_monotone_and_bounded() {
        let t = funnel_target(0.3, 10.0);
        let mut prev = f64::INFINITY;
        for i in -200..200 {
            let (l, dl) = t.log_likelihood(i as f64 * 0.37);
            assert!(l < prev || (l == 0.0 && prev == 0.0));
            assert!(l <= 0.0 && dl <= 0.0);
            prev = l;
        }
    }

    #[test]
    fn target_composition() {
        let t = funnel_target(0.1, 20.0);
        // point on the sphere of radius 2 around (0, -6)
        let y = DVector::from_vec(vec![0.0, -4.0]);
        let s = t.eval(&y).unwrap();
        assert!(s.g.abs() < 1e-14);
        assert!((s.log_p - (0.1f64.ln() + s.log_pi)).abs() < 1e-12);
        let deep = t.eval(&DVector::from_vec(vec![0.0, -6.0])).unwrap();
        assert!(t.z(deep.g) < -40.0);
        assert!((deep.log_p - deep.log_pi).abs() < 1e-17);
        assert!(deep.log_p <= deep.log_pi);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = funnel_target(0.1, 20.0);
        let mut rng = crate::rng(3);
        let f = |p: &DVector<f64>| {
            let s = t.eval(p).unwrap();
            DensityEval { log_p: s.log_p, grad: s.grad }
        };
        for _ in 0..100 {
            let y = DVector::from_fn(2, |_, _| rng.random_range(-5.0..1.0));
            fd_check(f, &y, 1e-5);
        }
    }

    #[test]
    fn transformed_target_gradient() {
        let d = 20;
        let ln: Arc<dyn LogDensity> = Arc::new(IndependentLognormal::from_moments(d, 1.0, 1.0).unwrap());
        let spec = BoundSpec::uniform(d, Bound::Lower { alpha: 0.0 }).unwrap();
        let model = pushforward_log_density(&spec, ln).unwrap();
        let problem = Arc::new(LimitStateProblem::new(LimitStateKind::OcticLognormal { y0: 15.0 }, d).unwrap());
        let (t, s0) = AstpaTarget::new(model, problem, Some(spec), AstpaParams::new(0.2, 10.0).unwrap(), &DVector::from_element(d, 1.0)).unwrap();
        assert_eq!(s0.x, DVector::zeros(d));
        assert_eq!(s0, t.eval(&DVector::zeros(d)).unwrap());
        let mut rng = crate::rng(9);
        let f = |p: &DVector<f64>| {
            let s = t.eval(p).unwrap();
            DensityEval { log_p: s.log_p, grad: s.grad }
        };
        for _ in 0..100 {
            let y = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
            fd_check(f, &y, 1e-5);
        }
    }
}
