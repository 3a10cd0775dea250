//! Differentiable log-densities for the benchmark joint distributions.
//!
//! Every density returns its log value together with the exact analytic
//! gradient. Points outside the support evaluate to `-inf` with a zero
//! gradient so that samplers reject them without special casing.

mod copula;
mod mixture;
mod ring;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::special::LN_2PI;
use crate::{Error, Result};

pub use copula::{gumbel_params_from_moments, GaussianCopulaGumbel, GumbelMarginal};
pub use mixture::{Covariance, GaussianMixture, MixtureComponent};
pub use ring::{
    format_ring_fixture, generate_ring_data, parse_ring_fixture, RingPosterior, RING_DATA_LEN,
    RING_DATA_MEAN, RING_DATA_SD, RING_DATA_SEED,
};

/// Log-density value and its gradient at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEval {
    pub log_p: f64,
    pub grad: DVector<f64>,
}

impl DensityEval {
    pub fn out_of_support(dim: usize) -> Self {
        DensityEval { log_p: f64::NEG_INFINITY, grad: DVector::zeros(dim) }
    }

    pub fn is_out_of_support(&self) -> bool {
        self.log_p == f64::NEG_INFINITY
    }
}

/// A differentiable, possibly unnormalized, log-density on `R^d`.
pub trait LogDensity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn family(&self) -> &'static str;

    /// Evaluation without input validation. Use [`LogDensity::eval`] at API boundaries.
    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval;

    fn eval(&self, x: &DVector<f64>) -> Result<DensityEval> {
        check_input(self.dim(), x)?;
        Ok(self.eval_unchecked(x))
    }

    /// Closed-form mean when one exists.
    fn mean(&self) -> Option<DVector<f64>> {
        None
    }

    fn is_normalized(&self) -> bool {
        true
    }

    /// Draws `n` i.i.d. points.
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        let _ = (n, rng);
        Err(Error::NoDirectSampler(self.family()))
    }
}

pub(crate) fn check_input(dim: usize, x: &DVector<f64>) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Direct i.i.d. draws as an `n × d` matrix, reproducible for a given seed.
pub fn sample_direct(model: &dyn LogDensity, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = crate::rng(seed);
    let draws = model.sample(n, &mut rng)?;
    let d = model.dim();
    Ok(DMatrix::from_fn(n, d, |i, j| draws[i][j]))
}

pub(crate) fn std_normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn std_normal_vec(d: usize, rng: &mut dyn RngCore) -> DVector<f64> {
    DVector::from_fn(d, |_, _| std_normal(rng))
}

/// Independent Gaussian with per-coordinate mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentGaussian {
    mean: DVector<f64>,
    sd: DVector<f64>,
}

impl IndependentGaussian {
    pub fn new(mean: DVector<f64>, sd: DVector<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != sd.len() {
            return Err(Error::InvalidParameter("mean and sd must be non-empty and of equal length".into()));
        }
        if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("standard deviations must be positive".into()));
        }
        Ok(IndependentGaussian { mean, sd })
    }

    pub fn standard(d: usize) -> Result<Self> {
        Self::new(DVector::zeros(d), DVector::from_element(d, 1.0))
    }

    pub fn sd(&self) -> &DVector<f64> {
        &self.sd
    }
}

impl LogDensity for IndependentGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn family(&self) -> &'static str {
        "independent-gaussian"
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        let mut log_p = 0.0;
        let mut grad = DVector::zeros(x.len());
        for i in 0..x.len() {
            let u = (x[i] - self.mean[i]) / self.sd[i];
            log_p += -0.5 * (LN_2PI + u * u) - self.sd[i].ln();
            grad[i] = -u / self.sd[i];
        }
        DensityEval { log_p, grad }
    }

    fn mean(&self) -> Option<DVector<f64>> {
        Some(self.mean.clone())
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        Ok((0..n)
            .map(|_| DVector::from_fn(self.dim(), |i, _| self.mean[i] + self.sd[i] * std_normal(rng)))
            .collect())
    }
}

/// Rosenbrock density `∝ exp(-a (x1-γ)² - Σ b_i (x_i - x_{i-1}²)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rosenbrock {
    a: f64,
    b: Vec<f64>,
    gamma: f64,
    log_norm: f64,
}

impl Rosenbrock {
    /// `b` holds one coefficient per coupled pair, so the dimension is `b.len() + 1`.
    pub fn new(a: f64, b: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(a > 0.0) || b.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("rosenbrock coefficients must be positive".into()));
        }
        let d = b.len() + 1;
        let log_norm = 0.5 * a.ln() + b.iter().map(|v| 0.5 * v.ln()).sum::<f64>()
            - 0.5 * d as f64 * std::f64::consts::PI.ln();
        Ok(Rosenbrock { a, b, gamma, log_norm })
    }

    pub fn uniform(d: usize, a: f64, b: f64, gamma: f64) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        Self::new(a, vec![b; d - 1], gamma)
    }
}

impl LogDensity for Rosenbrock {
    fn dim(&self) -> usize {
        self.b.len() + 1
    }

    fn family(&self) -> &'static str {
        "rosenbrock"
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        let d = self.dim();
        let mut grad = DVector::zeros(d);
        let r0 = x[0] - self.gamma;
        let mut expo = -self.a * r0 * r0;
        grad[0] = -2.0 * self.a * r0;
        for i in 1..d {
            let b = self.b[i - 1];
            let r = x[i] - x[i - 1] * x[i - 1];
            expo -= b * r * r;
            grad[i] -= 2.0 * b * r;
            grad[i - 1] += 4.0 * b * r * x[i - 1];
        }
        DensityEval { log_p: self.log_norm + expo, grad }
    }

    fn mean(&self) -> Option<DVector<f64>> {
        // x1 ~ N(γ, v); x2 | x1 ~ N(x1², w2); x3 | x2 ~ N(x2², w3)
        let d = self.dim();
        if d > 3 {
            return None;
        }
        let v = 0.5 / self.a;
        let g = self.gamma;
        let mut mean = vec![g];
        if d >= 2 {
            mean.push(v + g * g);
        }
        if d == 3 {
            let w2 = 0.5 / self.b[0];
            let var_x1_sq = 2.0 * v * v + 4.0 * g * g * v;
            let var_x2 = w2 + var_x1_sq;
            mean.push(var_x2 + mean[1] * mean[1]);
        }
        Some(DVector::from_vec(mean))
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        let d = self.dim();
        let sd0 = (0.5 / self.a).sqrt();
        Ok((0..n)
            .map(|_| {
                let mut x = DVector::zeros(d);
                x[0] = self.gamma + sd0 * std_normal(rng);
                for i in 1..d {
                    x[i] = x[i - 1] * x[i - 1] + (0.5 / self.b[i - 1]).sqrt() * std_normal(rng);
                }
                x
            })
            .collect())
    }
}

/// Neal's funnel: `x_d ~ N(0, 1)`, `x_i | x_d ~ N(0, exp(x_d))` for `i < d`.
#[derive(Debug, Clone, PartialEq)]
pub struct NealFunnel {
    dim: usize,
}

impl NealFunnel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter("funnel dimension must be at least 2".into()));
        }
        Ok(NealFunnel { dim })
    }
}

impl LogDensity for NealFunnel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn family(&self) -> &'static str {
        "neal-funnel"
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        let d = self.dim;
        let v = x[d - 1];
        let inv_var = (-v).exp();
        let mut grad = DVector::zeros(d);
        let mut sq = 0.0;
        for i in 0..d - 1 {
            sq += x[i] * x[i];
            grad[i] = -x[i] * inv_var;
        }
        let m = (d - 1) as f64;
        let log_p = -0.5 * d as f64 * LN_2PI - 0.5 * m * v - 0.5 * sq * inv_var - 0.5 * v * v;
        grad[d - 1] = -0.5 * m + 0.5 * sq * inv_var - v;
        DensityEval { log_p, grad }
    }

    fn mean(&self) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.dim))
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        let d = self.dim;
        Ok((0..n)
            .map(|_| {
                let v = std_normal(rng);
                let sd = (0.5 * v).exp();
                let mut x = DVector::zeros(d);
                for i in 0..d - 1 {
                    x[i] = sd * std_normal(rng);
                }
                x[d - 1] = v;
                x
            })
            .collect())
    }
}

/// Independent lognormal marginals, defined on the positive orthant.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentLognormal {
    mu_ln: DVector<f64>,
    sigma_ln: DVector<f64>,
}

impl IndependentLognormal {
    pub fn new(mu_ln: DVector<f64>, sigma_ln: DVector<f64>) -> Result<Self> {
        if mu_ln.is_empty() || mu_ln.len() != sigma_ln.len() {
            return Err(Error::InvalidParameter("lognormal parameters must be non-empty and of equal length".into()));
        }
        if sigma_ln.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("lognormal sigma must be positive".into()));
        }
        Ok(IndependentLognormal { mu_ln, sigma_ln })
    }

    /// Marginals matched to a mean and standard deviation in the original space.
    pub fn from_moments(d: usize, mean: f64, sd: f64) -> Result<Self> {
        if !(mean > 0.0) || !(sd > 0.0) {
            return Err(Error::InvalidParameter("lognormal moments must be positive".into()));
        }
        let s2 = (1.0 + (sd / mean).powi(2)).ln();
        let mu = mean.ln() - 0.5 * s2;
        Self::new(DVector::from_element(d, mu), DVector::from_element(d, s2.sqrt()))
    }

    pub fn mu_ln(&self) -> &DVector<f64> {
        &self.mu_ln
    }

    pub fn sigma_ln(&self) -> &DVector<f64> {
        &self.sigma_ln
    }
}

impl LogDensity for IndependentLognormal {
    fn dim(&self) -> usize {
        self.mu_ln.len()
    }

    fn family(&self) -> &'static str {
        "independent-lognormal"
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        let d = self.dim();
        if x.iter().any(|v| *v <= 0.0) {
            return DensityEval::out_of_support(d);
        }
        let mut log_p = 0.0;
        let mut grad = DVector::zeros(d);
        for i in 0..d {
            let s = self.sigma_ln[i];
            let lx = x[i].ln();
            let u = (lx - self.mu_ln[i]) / s;
            log_p += -lx - s.ln() - 0.5 * LN_2PI - 0.5 * u * u;
            grad[i] = -(1.0 + u / s) / x[i];
        }
        DensityEval { log_p, grad }
    }

    fn mean(&self) -> Option<DVector<f64>> {
        Some(DVector::from_fn(self.dim(), |i, _| {
            (self.mu_ln[i] + 0.5 * self.sigma_ln[i] * self.sigma_ln[i]).exp()
        }))
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        Ok((0..n)
            .map(|_| {
                DVector::from_fn(self.dim(), |i, _| {
                    (self.mu_ln[i] + self.sigma_ln[i] * std_normal(rng)).exp()
                })
            })
            .collect())
    }
}

/// The benchmark families behind one type.
#[derive(Debug, Clone)]
pub enum DensityModel {
    IndependentGaussian(IndependentGaussian),
    GumbelCopula(GaussianCopulaGumbel),
    Rosenbrock(Rosenbrock),
    NealFunnel(NealFunnel),
    IndependentLognormal(IndependentLognormal),
    RingPosterior(RingPosterior),
    GaussianMixture(GaussianMixture),
}

macro_rules! delegate {
    ($self:ident, $inner:ident => $e:expr) => {
        match $self {
            DensityModel::IndependentGaussian($inner) => $e,
            DensityModel::GumbelCopula($inner) => $e,
            DensityModel::Rosenbrock($inner) => $e,
            DensityModel::NealFunnel($inner) => $e,
            DensityModel::IndependentLognormal($inner) => $e,
            DensityModel::RingPosterior($inner) => $e,
            DensityModel::GaussianMixture($inner) => $e,
        }
    };
}

impl LogDensity for DensityModel {
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }

    fn family(&self) -> &'static str {
        delegate!(self, m => m.family())
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        delegate!(self, m => m.eval_unchecked(x))
    }

    fn mean(&self) -> Option<DVector<f64>> {
        delegate!(self, m => m.mean())
    }

    fn is_normalized(&self) -> bool {
        delegate!(self, m => m.is_normalized())
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        delegate!(self, m => m.sample(n, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{fd_check, trapezoid_2d};
    use rand::Rng;

    #[test]
    fn funnel_origin_is_product_of_standard_normals() {
        let f = NealFunnel::new(2).unwrap();
        let e = f.eval(&DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert!((e.log_p + LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn rosenbrock_mode_value() {
        let r = Rosenbrock::uniform(2, 0.05, 5.0, 1.0).unwrap();
        let e = r.eval(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let expected = (0.05f64.sqrt() * 5f64.sqrt() / std::f64::consts::PI).ln();
        assert!((e.log_p - expected).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        let f = NealFunnel::new(3).unwrap();
        assert!(matches!(
            f.eval(&DVector::from_vec(vec![0.0, 0.0])),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(f.eval(&DVector::from_vec(vec![0.0, f64::NAN, 0.0])), Err(Error::NonFinite)));
    }

    #[test]
    fn lognormal_outside_support() {
        let m = IndependentLognormal::from_moments(2, 1.0, 1.0).unwrap();
        let e = m.eval(&DVector::from_vec(vec![1.0, -0.5])).unwrap();
        assert!(e.is_out_of_support());
        assert_eq!(e.grad, DVector::zeros(2));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::rng(11);
        let models: Vec<DensityModel> = vec![
            DensityModel::IndependentGaussian(
                IndependentGaussian::new(DVector::from_vec(vec![1.0, -2.0, 0.5]), DVector::from_vec(vec![0.5, 2.0, 1.0])).unwrap(),
            ),
            DensityModel::Rosenbrock(Rosenbrock::uniform(3, 1.0, 5.0, 0.5).unwrap()),
            DensityModel::NealFunnel(NealFunnel::new(4).unwrap()),
            DensityModel::IndependentLognormal(IndependentLognormal::from_moments(3, 1.0, 1.0).unwrap()),
        ];
        for m in &models {
            for _ in 0..100 {
                let x = DVector::from_fn(m.dim(), |_, _| {
                    if m.family() == "independent-lognormal" {
                        rng.random_range(0.2..3.0)
                    } else {
                        rng.random_range(-1.5..1.5)
                    }
                });
                fd_check(|p| m.eval(p).unwrap(), &x, 1e-5);
            }
        }
    }

    #[test]
    fn two_dimensional_families_integrate_to_one() {
        let funnel = NealFunnel::new(2).unwrap();
        let z = trapezoid_2d(|x| funnel.eval_unchecked(x).log_p.exp(), (-12.0, 12.0), (-7.0, 7.0), 1201, 701);
        assert!((0.99..=1.01).contains(&z), "funnel {z}");

        let rosen = Rosenbrock::uniform(2, 0.05, 5.0, 1.0).unwrap();
        let z = trapezoid_2d(|x| rosen.eval_unchecked(x).log_p.exp(), (-25.0, 27.0), (-5.0, 400.0), 1601, 8001);
        assert!((0.99..=1.01).contains(&z), "rosenbrock {z}");

        let gauss = IndependentGaussian::new(DVector::from_vec(vec![1.0, -1.0]), DVector::from_vec(vec![0.5, 2.0])).unwrap();
        let z = trapezoid_2d(|x| gauss.eval_unchecked(x).log_p.exp(), (-4.0, 6.0), (-15.0, 13.0), 501, 501);
        assert!((0.99..=1.01).contains(&z), "gaussian {z}");
    }

    #[test]
    fn sample_direct_is_reproducible() {
        let f = DensityModel::NealFunnel(NealFunnel::new(3).unwrap());
        let a = sample_direct(&f, 50, 9).unwrap();
        let b = sample_direct(&f, 50, 9).unwrap();
        assert_eq!(a, b);
        let ring = DensityModel::RingPosterior(RingPosterior::standard(2).unwrap());
        assert!(matches!(sample_direct(&ring, 5, 1), Err(Error::NoDirectSampler("ring-posterior"))));
    }

    #[test]
    fn gaussian_sample_mean() {
        let g = IndependentGaussian::standard(2).unwrap();
        let s = sample_direct(&g, 100_000, 3).unwrap();
        for j in 0..2 {
            assert!(s.column(j).mean().abs() < 0.02);
        }
    }

    #[test]
    fn funnel_last_coordinate_is_standard_normal() {
        let f = NealFunnel::new(2).unwrap();
        let s = sample_direct(&f, 1_000_000, 4).unwrap();
        let v = s.column(1).variance();
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn rosenbrock_mean_matches_samples() {
        for (d, a, b, g) in [(2usize, 0.05, 5.0, 1.0), (3, 1.0, 5.0, 0.5)] {
            let r = Rosenbrock::uniform(d, a, b, g).unwrap();
            let mean = r.mean().unwrap();
            let s = sample_direct(&r, 400_000, 5).unwrap();
            for j in 0..d {
                let m = s.column(j).mean();
                let se = (s.column(j).variance() / 400_000.0).sqrt();
                assert!((m - mean[j]).abs() < 5.0 * se, "d={d} j={j} {m} vs {}", mean[j]);
            }
        }
    }
}
