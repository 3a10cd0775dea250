//! Inverse importance sampling: a Gaussian mixture fitted to target samples
//! serves as importance density for the target's normalizing constant.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::density::{Covariance, GaussianMixture, LogDensity, MixtureComponent};
use crate::hmc::{hmcmc_chain, thinning_stride, ChainRun, SamplerConfig};
use crate::special::{log_mean_exp, log_sum_exp};
use crate::target::{DensityTarget, Target};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub k: usize,
    pub covariance: CovarianceKind,
    pub max_iter: usize,
    /// Convergence tolerance on the mean log-likelihood.
    pub tol: f64,
    /// Floor on covariance eigenvalues.
    pub floor: f64,
}

/// Dimension from which a single diagonal component is used.
pub const HIGH_DIM: usize = 20;
pub const MAX_COMPONENTS: usize = 10;
const PRUNE_WEIGHT: f64 = 1e-6;

impl EmConfig {
    pub fn new(k: usize, covariance: CovarianceKind) -> Self {
        EmConfig { k, covariance, max_iter: 300, tol: 1e-6, floor: 1e-8 }
    }

    /// Up to ten full components in low dimension, limited so that every
    /// component has about ten samples per parameter; one diagonal component
    /// otherwise.
    pub fn for_samples(d: usize, n: usize) -> Self {
        if d < HIGH_DIM {
            let params = d + d * (d + 1) / 2 + 1;
            let k = (n / (10 * params)).clamp(1, MAX_COMPONENTS);
            Self::new(k, CovarianceKind::Full)
        } else {
            Self::new(1, CovarianceKind::Diagonal)
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Mean log-likelihood after every EM iteration.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    pub pruned: usize,
}

fn row(samples: &DMatrix<f64>, i: usize) -> DVector<f64> {
    samples.row(i).transpose()
}

/// k-means++ seeding.
fn seed_centres(samples: &DMatrix<f64>, k: usize, rng: &mut dyn RngCore) -> Vec<DVector<f64>> {
    let n = samples.nrows();
    let mut centres = vec![row(samples, rng.random_range(0..n))];
    let mut dist: Vec<f64> = (0..n).map(|i| (row(samples, i) - &centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, w) in dist.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        let c = row(samples, pick);
        for (i, v) in dist.iter_mut().enumerate() {
            *v = v.min((row(samples, i) - &c).norm_squared());
        }
        centres.push(c);
    }
    centres
}

fn floored_covariance(cov: DMatrix<f64>, kind: CovarianceKind, floor: f64) -> Result<Covariance> {
    match kind {
        CovarianceKind::Diagonal => Covariance::diagonal(cov.diagonal().map(|v| v.max(floor))),
        CovarianceKind::Full => {
            let sym = crate::hmc::symmetrize(&cov);
            let eig = sym.symmetric_eigen();
            let values = eig.eigenvalues.map(|v| v.max(floor));
            let m = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
            Covariance::full(crate::hmc::symmetrize(&m))
        }
    }
}

/// Weighted means and covariances from responsibilities `resp` (n × k).
fn m_step(samples: &DMatrix<f64>, resp: &DMatrix<f64>, config: &EmConfig) -> Result<Vec<MixtureComponent>> {
    let n = samples.nrows();
    let mut out = Vec::with_capacity(resp.ncols());
    for k in 0..resp.ncols() {
        let r = resp.column(k);
        let nk: f64 = r.sum();
        if !(nk > 0.0) {
            continue;
        }
        let mean = samples.tr_mul(&r) / nk;
        let centred = DMatrix::from_fn(n, samples.ncols(), |i, j| (samples[(i, j)] - mean[j]) * r[i].sqrt());
        let cov = centred.tr_mul(&centred) / nk;
        out.push(MixtureComponent { weight: nk / n as f64, mean, cov: floored_covariance(cov, config.covariance, config.floor)? });
    }
    Ok(out)
}

fn normalized(mut comps: Vec<MixtureComponent>) -> Result<GaussianMixture> {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= total;
    }
    // renormalization can leave a few ulps of drift
    let drift: f64 = 1.0 - comps.iter().map(|c| c.weight).sum::<f64>();
    comps[0].weight += drift;
    GaussianMixture::new(comps)
}

/// Expectation-maximization fit of a Gaussian mixture; rows of `samples` are points.
pub fn fit_gmm(samples: &DMatrix<f64>, config: &EmConfig, rng: &mut dyn RngCore) -> Result<GmmFit> {
    let (n, d) = samples.shape();
    if config.k == 0 {
        return Err(Error::InvalidParameter("need at least one mixture component".into()));
    }
    if n < 2 || d == 0 {
        return Err(Error::Fit(format!("cannot fit a mixture to {n} samples")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("samples must be finite".into()));
    }
    let global = normalized(m_step(samples, &DMatrix::from_element(n, 1, 1.0), config)?)?;
    if config.k == 1 {
        let ll = samples.row_iter().map(|r| global.log_pdf(&r.transpose())).sum::<f64>() / n as f64;
        return Ok(GmmFit { mixture: global, log_likelihood: vec![ll], converged: true, pruned: 0 });
    }

    let centres = seed_centres(samples, config.k.min(n), rng);
    let cov = global.components()[0].cov.clone();
    let w = 1.0 / centres.len() as f64;
    let mut mixture = normalized(centres.into_iter().map(|mean| MixtureComponent { weight: w, mean, cov: cov.clone() }).collect())?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut pruned = 0;
    for _ in 0..config.max_iter {
        let k = mixture.n_components();
        let mut resp = DMatrix::zeros(n, k);
        let mut ll = 0.0;
        for i in 0..n {
            let terms = mixture.component_log_terms(&row(samples, i));
            let norm = log_sum_exp(&terms);
            ll += norm;
            for (j, t) in terms.iter().enumerate() {
                resp[(i, j)] = (t - norm).exp();
            }
        }
        ll /= n as f64;
        let mut comps = m_step(samples, &resp, config)?;
        comps.retain(|c| c.weight >= PRUNE_WEIGHT);
        if comps.len() < k {
            pruned += k - comps.len();
            log::warn!("pruned {} degenerate mixture component(s)", k - comps.len());
        }
        mixture = normalized(comps)?;
        let done = trace.last().is_some_and(|prev: &f64| (ll - prev).abs() < config.tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }
    Ok(GmmFit { mixture, log_likelihood: trace, converged, pruned })
}

/// Which half-sample combination produced `Ĉ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRule {
    Average,
    Min,
}

/// Largest accepted ratio between the two half-sample estimates.
pub const SPLIT_RATIO: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IisResult {
    pub log_c: f64,
    pub log_c1: f64,
    pub log_c2: f64,
    pub rule: SplitRule,
    /// Draws that entered the estimate.
    pub m: usize,
    /// Target evaluations spent.
    pub calls: u64,
    /// Estimated `Var(Ĉ) / Ĉ²`.
    pub rel_var: f64,
}

impl IisResult {
    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    pub fn cov(&self) -> f64 {
        self.rel_var.sqrt()
    }
}

/// Combines the half-sample estimates: the full mean when they agree within a
/// factor of three, the smaller one otherwise.
pub fn split_rule(log_c1: f64, log_c2: f64, log_full: f64) -> (f64, SplitRule) {
    if (log_c1 - log_c2).abs() <= SPLIT_RATIO.ln() || (log_c1 == log_c2) {
        (log_full, SplitRule::Average)
    } else {
        (log_c1.min(log_c2), SplitRule::Min)
    }
}

/// IIS estimate from log importance weights `ln h̃(x_i) − ln Q(x_i)`, in draw order.
pub fn iis_from_log_weights(log_w: &[f64]) -> Result<IisResult> {
    let m = log_w.len();
    if m < 2 {
        return Err(Error::InvalidParameter("need at least two importance weights".into()));
    }
    let half = m / 2;
    let log_full = log_mean_exp(log_w);
    let log_c1 = log_mean_exp(&log_w[..half]);
    let log_c2 = log_mean_exp(&log_w[half..]);
    if log_full == f64::NEG_INFINITY {
        return Err(Error::Stage {
            stage: crate::Stage::Iis,
            source: Box::new(Error::Fit("every importance weight is zero".into())),
        });
    }
    let (log_c, rule) = split_rule(log_c1, log_c2, log_full);
    let ss: f64 = log_w.iter().map(|lw| ((lw - log_c).exp() - 1.0).powi(2)).sum();
    let rel_var = ss / (m as f64 * (m as f64 - 1.0));
    Ok(IisResult { log_c, log_c1, log_c2, rule, m, calls: m as u64, rel_var })
}

/// Estimates the normalizing constant of `target` with `m` draws from `q`,
/// one target evaluation each.
pub fn estimate_ch(target: &dyn Target, q: &GaussianMixture, m: usize, rng: &mut dyn RngCore) -> Result<IisResult> {
    if q.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: q.dim() });
    }
    let mut log_w = Vec::with_capacity(m);
    for _ in 0..m {
        let (_, x) = q.sample_one(rng);
        let lw = target.evaluate(&x).log_p - q.log_pdf(&x);
        if lw.is_nan() || lw == f64::INFINITY {
            log::warn!("dropping a non-finite importance weight");
            continue;
        }
        log_w.push(lw);
    }
    let mut out = iis_from_log_weights(&log_w)?;
    out.calls = m as u64;
    Ok(out)
}

/// Normalizing constant of an unnormalized posterior.
#[derive(Debug, Clone)]
pub struct PosteriorConstant {
    pub iis: IisResult,
    pub fit: GmmFit,
    pub chain: ChainRun,
    /// Posterior evaluations: chain (search, burn-in, samples) plus IIS draws.
    pub calls: u64,
}

impl PosteriorConstant {
    pub fn log_c(&self) -> f64 {
        self.iis.log_c
    }
}

/// Samples `posterior` with standard HMCMC from `init`, fits the mixture to the
/// thinned chain and runs IIS with `m_pi` draws.
pub fn estimate_c_pi(
    posterior: &dyn LogDensity,
    init: &DVector<f64>,
    n_burnin: usize,
    n_pi: usize,
    m_pi: usize,
    rng: &mut dyn RngCore,
) -> Result<PosteriorConstant> {
    let target = DensityTarget(posterior);
    crate::density::check_input(posterior.dim(), init)?;
    let start = target.evaluate(init);
    let config = SamplerConfig::new(posterior.dim(), n_burnin, n_pi);
    let chain = hmcmc_chain(&target, start, &config, rng).map_err(|e| e.at(crate::Stage::Sampling))?;
    let samples = chain.sample_matrix();
    let stride = thinning_stride(samples.nrows(), chain.ess_min());
    let thinned = thin_rows(&samples, stride);
    let fit = fit_gmm(&thinned, &EmConfig::for_samples(posterior.dim(), thinned.nrows()), rng)
        .map_err(|e| e.at(crate::Stage::Fit))?;
    let iis = estimate_ch(&target, &fit.mixture, m_pi, rng).map_err(|e| e.at(crate::Stage::Iis))?;
    let calls = chain.calls.total() + iis.calls + 1;
    Ok(PosteriorConstant { iis, fit, chain, calls })
}

/// Every `stride`-th row, starting with the first.
pub fn thin_rows(samples: &DMatrix<f64>, stride: usize) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..samples.nrows()).step_by(stride.max(1)).collect();
    samples.select_rows(idx.iter())
}
