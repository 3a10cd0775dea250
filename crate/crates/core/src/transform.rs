//! Coordinate-wise bijections between bounded supports and `R^d`.
//!
//! `lower(α)`: `y = ln(x - α)`, `upper(β)`: `y = ln(β - x)`,
//! `interval(α, β)`: `y = logit((x - α) / (β - α))`.

use std::sync::Arc;

use nalgebra::DVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::density::{check_input, DensityEval, LogDensity};
use crate::special::{sigmoid, softplus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Bound {
    Unbounded,
    Lower { alpha: f64 },
    Upper { beta: f64 },
    Interval { alpha: f64, beta: f64 },
}

impl Bound {
    fn validate(&self) -> Result<()> {
        match *self {
            Bound::Interval { alpha, beta } if !(alpha < beta) => {
                Err(Error::InvalidParameter(format!("empty interval ({alpha}, {beta})")))
            }
            Bound::Lower { alpha: v } | Bound::Upper { beta: v } if !v.is_finite() => {
                Err(Error::InvalidParameter("bounds must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn to_unbounded(&self, x: f64) -> Result<f64> {
        let y = match *self {
            Bound::Unbounded => x,
            Bound::Lower { alpha } if x > alpha => (x - alpha).ln(),
            Bound::Upper { beta } if x < beta => (beta - x).ln(),
            Bound::Interval { alpha, beta } if x > alpha && x < beta => ((x - alpha) / (beta - x)).ln(),
            _ => return Err(Error::OutOfSupport(format!("{x} is not inside {self:?}"))),
        };
        Ok(y)
    }

    pub fn to_bounded(&self, y: f64) -> f64 {
        match *self {
            Bound::Unbounded => y,
            Bound::Lower { alpha } => alpha + y.exp(),
            Bound::Upper { beta } => beta - y.exp(),
            // evaluate from the nearer end so the result stays inside for moderate |y|
            Bound::Interval { alpha, beta } if y > 0.0 => beta - (beta - alpha) * sigmoid(-y),
            Bound::Interval { alpha, beta } => alpha + (beta - alpha) * sigmoid(y),
        }
    }

    /// `dx/dy`, `ln|dx/dy|` and `d ln|dx/dy| / dy` at `y`.
    pub fn jacobian(&self, y: f64) -> (f64, f64, f64) {
        match *self {
            Bound::Unbounded => (1.0, 0.0, 0.0),
            Bound::Lower { .. } => (y.exp(), y, 1.0),
            Bound::Upper { .. } => (-y.exp(), y, 1.0),
            Bound::Interval { alpha, beta } => {
                let s = sigmoid(y);
                let w = beta - alpha;
                (w * s * (1.0 - s), w.ln() - softplus(-y) - softplus(y), 1.0 - 2.0 * s)
            }
        }
    }
}

/// Per-coordinate bounds of a support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    bounds: Vec<Bound>,
}

impl BoundSpec {
    pub fn new(bounds: Vec<Bound>) -> Result<Self> {
        for b in &bounds {
            b.validate()?;
        }
        Ok(BoundSpec { bounds })
    }

    pub fn uniform(d: usize, bound: Bound) -> Result<Self> {
        Self::new(vec![bound; d])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn is_identity(&self) -> bool {
        self.bounds.iter().all(|b| matches!(b, Bound::Unbounded))
    }

    pub fn to_unbounded(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self.dim(), x)?;
        let y: Result<Vec<f64>> = self.bounds.iter().zip(x.iter()).map(|(b, v)| b.to_unbounded(*v)).collect();
        Ok(DVector::from_vec(y?))
    }

    pub fn to_bounded(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| self.bounds[i].to_bounded(y[i]))
    }

    /// Diagonal of the Jacobian `dx/dy`.
    pub fn jacobian_diag(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| self.bounds[i].jacobian(y[i]).0)
    }
}

/// Density of `Y = R(X)` for `X ~ inner`.
#[derive(Debug, Clone)]
pub struct Pushforward {
    spec: BoundSpec,
    inner: Arc<dyn LogDensity>,
}

impl Pushforward {
    pub fn inner(&self) -> &Arc<dyn LogDensity> {
        &self.inner
    }

    pub fn spec(&self) -> &BoundSpec {
        &self.spec
    }
}

impl LogDensity for Pushforward {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn family(&self) -> &'static str {
        "pushforward"
    }

    fn eval_unchecked(&self, y: &DVector<f64>) -> DensityEval {
        let x = self.spec.to_bounded(y);
        let e = self.inner.eval_unchecked(&x);
        if e.is_out_of_support() || !e.log_p.is_finite() {
            return DensityEval::out_of_support(y.len());
        }
        let mut log_p = e.log_p;
        let mut grad = e.grad;
        for (i, b) in self.spec.bounds.iter().enumerate() {
            let (dx, log_j, dlog_j) = b.jacobian(y[i]);
            log_p += log_j;
            grad[i] = grad[i] * dx + dlog_j;
        }
        DensityEval { log_p, grad }
    }

    fn is_normalized(&self) -> bool {
        self.inner.is_normalized()
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        self.inner.sample(n, rng)?.iter().map(|x| self.spec.to_unbounded(x)).collect()
    }
}

/// Log-density of the image of `model` under the bounded-to-unbounded map.
/// An all-unbounded spec returns `model` itself.
pub fn pushforward_log_density(spec: &BoundSpec, model: Arc<dyn LogDensity>) -> Result<Arc<dyn LogDensity>> {
    if spec.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: spec.dim() });
    }
    if spec.is_identity() {
        return Ok(model);
    }
    Ok(Arc::new(Pushforward { spec: spec.clone(), inner: model }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{DensityModel, IndependentGaussian, IndependentLognormal};
    use crate::special::LN_2PI;
    use crate::testing::fd_check;
    use rand::Rng;

    #[derive(Debug)]
    struct UnitUniform;

    impl LogDensity for UnitUniform {
        fn dim(&self) -> usize {
            1
        }
        fn family(&self) -> &'static str {
            "uniform"
        }
        fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
            if x[0] > 0.0 && x[0] < 1.0 {
                DensityEval { log_p: 0.0, grad: DVector::zeros(1) }
            } else {
                DensityEval::out_of_support(1)
            }
        }
    }

    #[test]
    fn reference_points() {
        assert_eq!(Bound::Lower { alpha: 0.0 }.to_unbounded(1.0).unwrap(), 0.0);
        assert_eq!(Bound::Interval { alpha: 0.0, beta: 1.0 }.to_unbounded(0.5).unwrap(), 0.0);
        assert_eq!(Bound::Upper { beta: 3.0 }.to_unbounded(2.0).unwrap(), 0.0);
        assert_eq!(Bound::Lower { alpha: 0.0 }.to_bounded(0.0), 1.0);
        assert_eq!(Bound::Interval { alpha: 0.0, beta: 1.0 }.to_bounded(0.0), 0.5);
        assert!(Bound::Lower { alpha: 0.0 }.to_unbounded(0.0).is_err());
        assert!(Bound::Interval { alpha: 0.0, beta: 1.0 }.to_unbounded(1.0).is_err());
        assert!(BoundSpec::new(vec![Bound::Interval { alpha: 1.0, beta: 1.0 }]).is_err());
    }

    #[test]
    fn round_trips() {
        let mut rng = crate::rng(5);
        let kinds = [
            Bound::Lower { alpha: -2.0 },
            Bound::Upper { beta: 3.0 },
            Bound::Interval { alpha: -1.0, beta: 4.0 },
        ];
        for b in kinds {
            for _ in 0..1000 {
                let x = match b {
                    Bound::Lower { alpha } => alpha + rng.random_range(1e-3..10.0),
                    Bound::Upper { beta } => beta - rng.random_range(1e-3..10.0),
                    Bound::Interval { alpha, beta } => rng.random_range(alpha + 1e-3..beta - 1e-3),
                    Bound::Unbounded => unreachable!(),
                };
                let back = b.to_bounded(b.to_unbounded(x).unwrap());
                assert!((back - x).abs() <= 1e-12, "{b:?} {x} {back}");
            }
        }
    }

    #[test]
    fn lognormal_pushforward_is_gaussian() {
        let ln = IndependentLognormal::from_moments(3, 1.0, 1.0).unwrap();
        let gauss = IndependentGaussian::new(ln.mu_ln().clone(), ln.sigma_ln().clone()).unwrap();
        let spec = BoundSpec::uniform(3, Bound::Lower { alpha: 0.0 }).unwrap();
        let push = pushforward_log_density(&spec, Arc::new(ln)).unwrap();
        let mut rng = crate::rng(6);
        for _ in 0..50 {
            let y = DVector::from_fn(3, |_, _| rng.random_range(-3.0..2.0));
            let a = push.eval(&y).unwrap();
            let b = gauss.eval(&y).unwrap();
            assert!((a.log_p - b.log_p).abs() < 1e-12);
            assert!((a.grad - b.grad).amax() < 1e-12);
        }
    }

    #[test]
    fn uniform_interval_pushforward_is_logistic() {
        let spec = BoundSpec::uniform(1, Bound::Interval { alpha: 0.0, beta: 1.0 }).unwrap();
        let push = pushforward_log_density(&spec, Arc::new(UnitUniform)).unwrap();
        let h = 1e-3;
        let mut total = 0.0;
        let mut y = -30.0;
        while y <= 30.0 {
            let e = push.eval(&DVector::from_element(1, y)).unwrap();
            let logistic = -y - 2.0 * (-y).exp().ln_1p();
            assert!((e.log_p - logistic).abs() < 1e-10, "y={y}");
            total += e.log_p.exp() * h;
            y += h;
        }
        assert!((total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn pushforward_integrates_to_one() {
        let ln = IndependentLognormal::from_moments(1, 2.0, 0.7).unwrap();
        let spec = BoundSpec::uniform(1, Bound::Upper { beta: 0.0 }).unwrap();
        // reflect through the upper bound: x ↦ -x keeps the support (−∞, 0)
        #[derive(Debug)]
        struct Neg(IndependentLognormal);
        impl LogDensity for Neg {
            fn dim(&self) -> usize {
                1
            }
            fn family(&self) -> &'static str {
                "neg"
            }
            fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
                let e = self.0.eval_unchecked(&-x);
                DensityEval { log_p: e.log_p, grad: -e.grad }
            }
        }
        let push = pushforward_log_density(&spec, Arc::new(Neg(ln))).unwrap();
        let h = 1e-3;
        let total: f64 = (0..20_000).map(|i| push.eval(&DVector::from_element(1, -10.0 + i as f64 * h)).unwrap().log_p.exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn identity_spec_returns_same_object() {
        let g: Arc<dyn LogDensity> = Arc::new(IndependentGaussian::standard(2).unwrap());
        let spec = BoundSpec::uniform(2, Bound::Unbounded).unwrap();
        let p = pushforward_log_density(&spec, g.clone()).unwrap();
        assert!(Arc::ptr_eq(&g, &p));
        let e = p.eval(&DVector::zeros(2)).unwrap();
        assert!((e.log_p + LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn pushforward_gradient_matches_finite_differences() {
        let spec = BoundSpec::new(vec![
            Bound::Lower { alpha: 0.0 },
            Bound::Interval { alpha: 0.0, beta: 3.0 },
            Bound::Upper { beta: 5.0 },
        ])
        .unwrap();
        let model = DensityModel::IndependentLognormal(IndependentLognormal::from_moments(3, 1.0, 0.5).unwrap());
        let push = pushforward_log_density(&spec, Arc::new(model)).unwrap();
        let mut rng = crate::rng(7);
        for _ in 0..100 {
            let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            fd_check(|p| push.eval(p).unwrap(), &y, 1e-5);
        }
    }
}
