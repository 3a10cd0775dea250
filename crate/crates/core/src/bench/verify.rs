//! Self-checks behind `bench verify`.
//!
//! `properties` exercises the numerical building blocks against oracles that do
//! not go through the estimator; `tables` reruns the registry problems with a
//! reduced number of repetitions and compares against the published rows.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, RngCore};

use super::registry::registry;
use super::run::{run_benchmark, BenchmarkSpec, EstimatorKind};
use crate::density::{std_normal, IndependentGaussian, LogDensity};
use crate::hmc::{ess, leapfrog, MassMatrix};
use crate::qnp::{verify_mala_equivalence, BfgsState, QnpPhase, CURVATURE_THRESHOLD};
use crate::target::{DensityTarget, Target};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Properties,
    Tables,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "properties" => Ok(Suite::Properties),
            "tables" => Ok(Suite::Tables),
            _ => Err(Error::Config(format!("unknown suite `{s}` (expected properties or tables)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Check { name: name.into(), passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Largest finite-difference gradient error at `x`, relative to
/// `max(|fd|, |analytic|, 1)`. Uses the five-point stencil so that the
/// reference stays accurate when `ln p` is large, as in high dimensions.
pub fn fd_gradient_error(target: &dyn Target, x: &DVector<f64>) -> f64 {
    let s = target.evaluate(x);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let h = 1e-4 * (1.0 + x[i].abs());
        let at = |k: f64| {
            let mut xk = x.clone();
            xk[i] += k * h;
            target.evaluate(&xk).log_p
        };
        let fd = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h);
        let err = (fd - s.grad[i]).abs() / fd.abs().max(s.grad[i].abs()).max(1.0);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    worst
}

fn normal_vec(d: usize, rng: &mut dyn RngCore) -> DVector<f64> {
    DVector::from_fn(d, |_, _| std_normal(rng))
}

fn random_spd(d: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| std_normal(rng));
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5
}

fn gradient_checks(points: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = crate::rng(seed);
    let mut out = Vec::new();
    for spec in registry() {
        let setup = spec.setup()?;
        let (target, _) = setup.target(spec.params)?;
        let start = setup.start()?;
        let d = start.len();
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let x = &start + normal_vec(d, &mut rng) * 0.5;
            worst = worst.max(fd_gradient_error(&target, &x));
        }
        out.push(Check::new(format!("gradient {}", spec.id), worst <= 1e-5, format!("max rel error {worst:.2e} over {points} points")));
    }
    Ok(out)
}

fn leapfrog_checks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = crate::rng(seed);
    let spec = super::registry::lookup("ex2-d2")?;
    let (target, _) = spec.setup()?.target(spec.params)?;
    let mass = MassMatrix::from_matrix(random_spd(2, &mut rng))?;
    let eps = 0.05;

    let mut reversal: f64 = 0.0;
    for _ in 0..100 {
        let s0 = target.evaluate(&DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)));
        let z0 = mass.sample_momentum(&mut rng);
        let (s1, z1) = leapfrog(&target, &s0, z0.clone(), eps, 10, &mass);
        let (s2, z2) = leapfrog(&target, &s1, -z1, eps, 10, &mass);
        reversal = reversal.max((s2.x - &s0.x).amax()).max((z2 + z0).amax());
    }

    // Jacobian of the one-step map on (x, z) by central differences
    let step = |v: &DVector<f64>| {
        let s = target.evaluate(&v.rows(0, 2).into_owned());
        let (s1, z1) = leapfrog(&target, &s, v.rows(2, 2).into_owned(), eps, 1, &mass);
        DVector::from_iterator(4, s1.x.iter().chain(z1.iter()).copied())
    };
    let v = DVector::from_vec(vec![0.3, -0.2, 0.7, 1.1]);
    let h = 1e-5;
    let mut jac = DMatrix::zeros(4, 4);
    for j in 0..4 {
        let mut vp = v.clone();
        let mut vm = v.clone();
        vp[j] += h;
        vm[j] -= h;
        jac.set_column(j, &((step(&vp) - step(&vm)) / (2.0 * h)));
    }
    let det_err = (jac.determinant() - 1.0).abs();
    Ok(vec![
        Check::new("leapfrog reversibility", reversal <= 1e-10, format!("max error {reversal:.2e}")),
        Check::new("leapfrog volume", det_err <= 1e-6, format!("|det - 1| = {det_err:.2e}")),
    ])
}

fn mala_check(trials: usize, seed: u64) -> Result<Check> {
    let mut rng = crate::rng(seed);
    let spec = super::registry::lookup("ex3-d2-r2")?;
    let (target, _) = spec.setup()?.target(spec.params)?;
    let (mut dx, mut da): (f64, f64) = (0.0, 0.0);
    for i in 0..trials {
        let start = target.evaluate(&DVector::from_fn(2, |_, _| rng.random_range(-3.0..1.0)));
        let u = normal_vec(2, &mut rng);
        let eps = rng.random_range(0.05..0.8);
        let phase = if i % 2 == 0 {
            QnpPhase::BurnIn { w: random_spd(2, &mut rng), mass: random_spd(2, &mut rng) }
        } else {
            QnpPhase::Sampling { mass: random_spd(2, &mut rng) }
        };
        let (x, a) = verify_mala_equivalence(&target, &start, eps, &phase, &u)?;
        dx = dx.max(x);
        da = da.max(a);
    }
    Ok(Check::new(
        "QNp step equals preconditioned MALA",
        dx <= 1e-10 && da <= 1e-10,
        format!("max |Δx| {dx:.2e}, max |Δα| {da:.2e} over {trials} trials"),
    ))
}

fn bfgs_checks(seed: u64) -> Vec<Check> {
    let mut rng = crate::rng(seed);
    let mut b = BfgsState::from_matrix(DMatrix::from_element(1, 1, 1.0), CURVATURE_THRESHOLD);
    b.update(&DVector::from_element(1, 8.0), &DVector::from_element(1, 2.0));
    let secant = (b.w().to_matrix()[(0, 0)] - 4.0).abs();

    let h = random_spd(5, &mut rng) * 20.0;
    let h_inv = h.clone().try_inverse().expect("SPD matrix");
    let l_inv_t = h.clone().cholesky().expect("SPD matrix").l().try_inverse().expect("triangular").transpose();
    let mut b = BfgsState::new(5, false, CURVATURE_THRESHOLD);
    for k in 0..5 {
        let s = l_inv_t.column(k) * 4.0;
        let y = &h * &s;
        b.update(&s, &y);
    }
    let quad = (b.w().to_matrix() - h_inv).norm();

    let mut b = BfgsState::new(6, false, CURVATURE_THRESHOLD);
    let mut spd = true;
    for _ in 0..10_000 {
        let hk = random_spd(6, &mut rng) * rng.random_range(0.2..3.2);
        let s = normal_vec(6, &mut rng) * 3.0;
        let y = if rng.random::<f64>() < 0.2 { -&s } else { &hk * &s };
        b.update(&s, &y);
        spd &= b.w().to_matrix().cholesky().is_some();
    }
    vec![
        Check::new("BFGS 1-D secant", secant <= 1e-15, format!("error {secant:.2e}")),
        Check::new("BFGS quadratic inverse Hessian", quad <= 1e-6, format!("Frobenius error {quad:.2e}")),
        Check::new("BFGS stays SPD", spd, format!("{} updates, {} skips", b.updates, b.skips)),
    ]
}

fn ess_checks(seed: u64) -> Vec<Check> {
    let mut rng = crate::rng(seed);
    let n = 20_000;
    let iid: Vec<f64> = (0..n).map(|_| std_normal(&mut rng)).collect();
    let r_iid = ess(&iid) / n as f64;
    let mut ar = Vec::with_capacity(n);
    let mut x = std_normal(&mut rng);
    for _ in 0..n {
        x = 0.5 * x + 0.75f64.sqrt() * std_normal(&mut rng);
        ar.push(x);
    }
    let r_ar = ess(&ar) / n as f64;
    vec![
        Check::new("ESS i.i.d.", (0.8..=1.2).contains(&r_iid), format!("ESS/N = {r_iid:.3}")),
        Check::new("ESS AR(1) ρ=0.5", (r_ar * 3.0 - 1.0).abs() <= 0.25, format!("ESS/N = {r_ar:.3}, expected 1/3")),
    ]
}

fn scale_check(seed: u64) -> Result<Check> {
    let spec = super::registry::lookup("ex3-d2-r2")?;
    let setup = spec.setup()?;
    let mut config = spec.config(crate::estimator::SamplerKind::Qnp);
    let a = crate::estimator::run_astpa(&setup, &config, seed)?;
    config.log_scale = 1e3f64.ln();
    let b = crate::estimator::run_astpa(&setup, &config, seed)?;
    let rel = ((a.p_f - b.p_f) / a.p_f).abs();
    Ok(Check::new("estimate invariant to scaling h̃ by 10³", rel <= 1e-12, format!("relative change {rel:.2e}")))
}

/// Checks of the building blocks; fast enough to run before any table run.
pub fn properties(seed: u64) -> Result<Vec<Check>> {
    let mut out = gradient_checks(100, seed)?;
    let gauss = DensityTarget(Box::new(IndependentGaussian::standard(3)?) as Box<dyn LogDensity>);
    let mut rng = crate::rng(seed);
    let worst = (0..100).map(|_| fd_gradient_error(&gauss, &normal_vec(3, &mut rng))).fold(0.0, f64::max);
    out.push(Check::new("gradient standard normal", worst <= 1e-5, format!("max rel error {worst:.2e}")));
    out.extend(leapfrog_checks(seed)?);
    out.push(mala_check(1000, seed)?);
    out.extend(bfgs_checks(seed));
    out.extend(ess_checks(seed));
    out.push(scale_check(seed)?);
    Ok(out)
}

/// Reruns every registry row that has a published value for `estimator` with
/// `reps` repetitions. A row passes when the mean lies within three standard
/// errors of the published mean, using the published C.o.V for the spread.
pub fn tables(estimator: EstimatorKind, reps: usize, seed: u64, filter: Option<&str>) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for spec in registry() {
        if filter.is_some_and(|f| !spec.id.starts_with(f)) {
            continue;
        }
        let mut b = BenchmarkSpec::new(spec.id, estimator)?;
        let Some(published) = b.published() else { continue };
        b.reps = reps;
        b.seed_base = seed;
        let s = run_benchmark(&b)?;
        let Some(mean) = s.mean_p else {
            out.push(Check::new(spec.id, false, format!("all {} trials failed", s.reps)));
            continue;
        };
        let se = published.p * published.cov.max(0.05) / (s.completed as f64).sqrt();
        let z = (mean - published.p) / se;
        out.push(Check::new(
            format!("{} {}", spec.id, estimator),
            z.abs() <= 3.0,
            format!(
                "E[p] {mean:.3e} vs {:.3e} (z = {z:+.1}), C.o.V {} vs {:.2}, E[N_Total] {:.0} vs {:.0}, {} failed",
                published.p,
                s.sampling_cov.map_or("-".into(), |c| format!("{c:.2}")),
                published.cov,
                s.mean_n_total.unwrap_or(f64::NAN),
                published.n_total,
                s.failed
            ),
        ));
    }
    Ok(out)
}
