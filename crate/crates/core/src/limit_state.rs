//! Benchmark limit-state functions `g` with analytic gradients.
//!
//! The rare event is `{g ≤ 0}`. Every evaluation returns `g` and `∇g` together
//! and counts as one model call.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::density::check_input;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum LimitStateKind {
    /// `λ - Σx/√d + 2.5 (x1 - Σ_{j=2..γ} x_j)²`
    QuadraticGumbel { lambda: f64, gamma: usize },
    /// `c0 - c1·x1 - Σ_{i≥2} x_i`
    LinearRosenbrock { c0: f64, c1: f64 },
    /// `Σ_{i<d} x_i² + (x_d + 6)² - r²`
    Hyperspherical { r: f64 },
    /// Octic function of 17 leading coordinates plus a linear term in all of them.
    OcticLognormal { y0: f64 },
    /// `r² - (x1 - 2)² - Σ_{i≥2} x_i²`
    RingQuadratic { r: f64 },
    /// `offset + coeffsᵀx`, a tractable case with closed-form probabilities.
    Linear { offset: f64, coeffs: Vec<f64> },
}

impl LimitStateKind {
    pub fn name(&self) -> &'static str {
        match self {
            LimitStateKind::QuadraticGumbel { .. } => "quadratic-gumbel",
            LimitStateKind::LinearRosenbrock { .. } => "linear-rosenbrock",
            LimitStateKind::Hyperspherical { .. } => "hyperspherical",
            LimitStateKind::OcticLognormal { .. } => "octic-lognormal",
            LimitStateKind::RingQuadratic { .. } => "ring-quadratic",
            LimitStateKind::Linear { .. } => "linear",
        }
    }
}

/// Membership in the rare event domain; the boundary belongs to it.
pub fn indicator(g: f64) -> bool {
    g <= 0.0
}

/// A limit-state function bound to a dimension, with a model-call counter.
#[derive(Debug)]
pub struct LimitStateProblem {
    kind: LimitStateKind,
    dim: usize,
    calls: AtomicU64,
}

impl Clone for LimitStateProblem {
    /// The clone starts with a fresh counter.
    fn clone(&self) -> Self {
        LimitStateProblem { kind: self.kind.clone(), dim: self.dim, calls: AtomicU64::new(0) }
    }
}

impl LimitStateProblem {
    pub fn new(kind: LimitStateKind, dim: usize) -> Result<Self> {
        let ok = match &kind {
            LimitStateKind::QuadraticGumbel { gamma, .. } => *gamma >= 1 && *gamma <= dim,
            LimitStateKind::OcticLognormal { .. } => dim >= 17,
            LimitStateKind::Linear { coeffs, .. } => coeffs.len() == dim,
            _ => dim >= 1,
        };
        if dim == 0 || !ok {
            return Err(Error::InvalidParameter(format!("{} is not defined for d = {dim}", kind.name())));
        }
        Ok(LimitStateProblem { kind, dim, calls: AtomicU64::new(0) })
    }

    pub fn kind(&self) -> &LimitStateKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of model calls so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    /// `g(x)` and `∇g(x)`; one model call.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        check_input(self.dim, x)?;
        Ok(self.evaluate_unchecked(x))
    }

    pub(crate) fn evaluate_unchecked(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let d = self.dim;
        let mut grad = DVector::zeros(d);
        let g = match &self.kind {
            LimitStateKind::QuadraticGumbel { lambda, gamma } => {
                let w = 1.0 / (d as f64).sqrt();
                let c = x[0] - x.rows(1, gamma - 1).sum();
                grad.fill(-w);
                grad[0] += 5.0 * c;
                for j in 1..*gamma {
                    grad[j] -= 5.0 * c;
                }
                lambda - w * x.sum() + 2.5 * c * c
            }
            LimitStateKind::LinearRosenbrock { c0, c1 } => {
                grad.fill(-1.0);
                grad[0] = -c1;
                c0 - c1 * x[0] - x.rows(1, d - 1).sum()
            }
            LimitStateKind::Hyperspherical { r } => {
                let mut g = -r * r;
                for i in 0..d - 1 {
                    g += x[i] * x[i];
                    grad[i] = 2.0 * x[i];
                }
                g += (x[d - 1] + 6.0).powi(2);
                grad[d - 1] = 2.0 * (x[d - 1] + 6.0);
                g
            }
            LimitStateKind::OcticLognormal { y0 } => {
                let w = 1.0 / (d as f64).sqrt();
                grad.fill(-w);
                let c1 = x[0] - x.rows(1, 9).sum();
                let c2 = x[10] - x.rows(11, 3).sum();
                let c3 = x[14] - x.rows(15, 2).sum();
                let (d1, d2, d3) = (5.0 * c1, 4.0 * c2.powi(3), 8.0 * c3.powi(7));
                grad[0] += d1;
                for j in 1..10 {
                    grad[j] -= d1;
                }
                grad[10] += d2;
                for j in 11..14 {
                    grad[j] -= d2;
                }
                grad[14] += d3;
                for j in 15..17 {
                    grad[j] -= d3;
                }
                y0 - w * x.sum() + 2.5 * c1 * c1 + c2.powi(4) + c3.powi(8)
            }
            LimitStateKind::RingQuadratic { r } => {
                let mut g = r * r - (x[0] - 2.0).powi(2);
                grad[0] = -2.0 * (x[0] - 2.0);
                for i in 1..d {
                    g -= x[i] * x[i];
                    grad[i] = -2.0 * x[i];
                }
                g
            }
            LimitStateKind::Linear { offset, coeffs } => {
                grad.copy_from_slice(coeffs);
                offset + grad.dot(x)
            }
        };
        (g, grad)
    }

    /// Evaluates `g` (one model call) and reports membership in the rare event domain.
    pub fn indicator(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(indicator(self.evaluate(x)?.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fd_check(p: &LimitStateProblem, x: &DVector<f64>) {
        let (_, grad) = p.evaluate(x).unwrap();
        for i in 0..x.len() {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.evaluate(&xp).unwrap().0 - p.evaluate(&xm).unwrap().0) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1.0);
            assert!((fd - grad[i]).abs() <= 1e-5 * scale, "{} coord {i}: {} vs {fd}", p.kind().name(), grad[i]);
        }
    }

    #[test]
    fn reference_values() {
        let q = LimitStateProblem::new(LimitStateKind::QuadraticGumbel { lambda: 70.0, gamma: 2 }, 2).unwrap();
        let (g, _) = q.evaluate(&DVector::from_element(2, 10.0)).unwrap();
        assert!((g - (70.0 - 20.0 / 2f64.sqrt())).abs() < 1e-12);

        let h = LimitStateProblem::new(LimitStateKind::Hyperspherical { r: 2.0 }, 2).unwrap();
        assert_eq!(h.evaluate(&DVector::from_vec(vec![0.0, -6.0])).unwrap().0, -4.0);

        let o = LimitStateProblem::new(LimitStateKind::OcticLognormal { y0: 15.0 }, 200).unwrap();
        let (g, _) = o.evaluate(&DVector::from_element(200, 1.0)).unwrap();
        assert!((g - (15.0 - 200.0 / 200f64.sqrt() + 160.0 + 16.0 + 1.0)).abs() < 1e-10);
        assert!((g - 177.8579).abs() < 1e-4);
    }

    #[test]
    fn indicator_includes_boundary() {
        assert!(indicator(-0.001));
        assert!(indicator(0.0));
        assert!(!indicator(1e-12));
    }

    #[test]
    fn counts_one_call_per_evaluation() {
        let p = LimitStateProblem::new(LimitStateKind::RingQuadratic { r: 3.8 }, 3).unwrap();
        let x = DVector::zeros(3);
        for _ in 0..7 {
            p.evaluate(&x).unwrap();
        }
        p.indicator(&x).unwrap();
        assert_eq!(p.calls(), 8);
        assert_eq!(p.clone().calls(), 0);
        assert!(matches!(p.evaluate(&DVector::zeros(2)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_undefined_dimensions() {
        assert!(LimitStateProblem::new(LimitStateKind::OcticLognormal { y0: 15.0 }, 10).is_err());
        assert!(LimitStateProblem::new(LimitStateKind::QuadraticGumbel { lambda: 1.0, gamma: 4 }, 3).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let problems = [
            (LimitStateKind::QuadraticGumbel { lambda: -200.0, gamma: 20 }, 40),
            (LimitStateKind::LinearRosenbrock { c0: 250.0, c1: 3.0 }, 3),
            (LimitStateKind::Hyperspherical { r: 2.0 }, 5),
            (LimitStateKind::OcticLognormal { y0: 15.0 }, 20),
            (LimitStateKind::RingQuadratic { r: 3.4 }, 4),
            (LimitStateKind::Linear { offset: 3.0, coeffs: vec![1.0, -2.0] }, 2),
        ];
        let mut rng = crate::rng(21);
        for (kind, d) in problems {
            let p = LimitStateProblem::new(kind, d).unwrap();
            for _ in 0..100 {
                let x = DVector::from_fn(d, |_, _| rng.random_range(0.1..1.6));
                fd_check(&p, &x);
            }
        }
    }
}
