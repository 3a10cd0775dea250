use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::{std_normal_vec, DensityEval, LogDensity};
use crate::special::{norm_cdf, norm_isf, norm_ln_pdf, norm_ppf, norm_sf, EULER_GAMMA};
use crate::{Error, Result};

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before the normal quantile.
const PROB_CLIP: f64 = 1e-16;

/// Gumbel (maximum) marginal with location and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelMarginal {
    pub loc: f64,
    pub scale: f64,
}

/// Location and scale of a Gumbel (maximum) distribution with the given mean and
/// coefficient of variation.
pub fn gumbel_params_from_moments(mean: f64, cov: f64) -> Result<GumbelMarginal> {
    if !(cov > 0.0) || !cov.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid gumbel moments ({mean}, {cov})")));
    }
    let sd = mean.abs() * cov;
    let scale = sd * 6f64.sqrt() / std::f64::consts::PI;
    Ok(GumbelMarginal { loc: mean - scale * EULER_GAMMA, scale })
}

impl GumbelMarginal {
    fn t(&self, x: f64) -> f64 {
        (x - self.loc) / self.scale
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let t = self.t(x);
        -self.scale.ln() - t - (-t).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (-(-self.t(x)).exp()).exp()
    }

    pub fn sf(&self, x: f64) -> f64 {
        -(-(-self.t(x)).exp()).exp_m1()
    }

    /// Standard normal image of `x`, computed from whichever tail is more accurate.
    pub fn to_normal(&self, x: f64) -> f64 {
        let cdf = self.cdf(x);
        if cdf < 0.5 {
            norm_ppf(cdf.max(PROB_CLIP))
        } else {
            norm_isf(self.sf(x).max(PROB_CLIP))
        }
    }

    /// Inverse of [`GumbelMarginal::to_normal`].
    pub fn from_normal(&self, z: f64) -> f64 {
        // -ln F(x) = exp(-t)
        let neg_ln_cdf = if z < 0.0 { -norm_cdf(z).ln() } else { -(-norm_sf(z)).ln_1p() };
        self.loc - self.scale * neg_ln_cdf.ln()
    }
}

/// Gaussian copula with Gumbel marginals.
#[derive(Debug, Clone)]
pub struct GaussianCopulaGumbel {
    marginals: Vec<GumbelMarginal>,
    means: DVector<f64>,
    chol: DMatrix<f64>,
    /// `R^{-1} - I`
    prec_minus_id: DMatrix<f64>,
    half_log_det: f64,
}

impl GaussianCopulaGumbel {
    /// Marginals given by mean and coefficient of variation; `corr` is the
    /// correlation of the underlying Gaussian.
    pub fn new(means: DVector<f64>, covs: DVector<f64>, corr: DMatrix<f64>) -> Result<Self> {
        let d = means.len();
        if d == 0 || covs.len() != d || corr.nrows() != d || corr.ncols() != d {
            return Err(Error::InvalidParameter("copula parameter shapes disagree".into()));
        }
        for i in 0..d {
            if (corr[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter("correlation matrix needs a unit diagonal".into()));
            }
            for j in 0..i {
                if corr[(i, j)] != corr[(j, i)] {
                    return Err(Error::InvalidParameter("correlation matrix must be symmetric".into()));
                }
            }
        }
        let marginals = means
            .iter()
            .zip(covs.iter())
            .map(|(m, s)| gumbel_params_from_moments(*m, *s))
            .collect::<Result<Vec<_>>>()?;
        if marginals.iter().any(|m| !(m.scale > 0.0)) {
            return Err(Error::InvalidParameter("gumbel scale must be positive".into()));
        }
        let chol = corr.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let half_log_det = l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut prec_minus_id = chol.inverse();
        for i in 0..d {
            prec_minus_id[(i, i)] -= 1.0;
        }
        let prec_minus_id = (&prec_minus_id + prec_minus_id.transpose()) * 0.5;
        Ok(GaussianCopulaGumbel { marginals, means, chol: l, prec_minus_id, half_log_det })
    }

    /// Identical marginals with an equicorrelated matrix.
    pub fn equicorrelated(d: usize, mean: f64, cov: f64, rho: f64) -> Result<Self> {
        let corr = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
        Self::new(DVector::from_element(d, mean), DVector::from_element(d, cov), corr)
    }

    pub fn marginals(&self) -> &[GumbelMarginal] {
        &self.marginals
    }

    /// Maps independent standard normals to the original space.
    pub fn from_standard_normal(&self, u: &DVector<f64>) -> DVector<f64> {
        let z = &self.chol * u;
        DVector::from_fn(z.len(), |i, _| self.marginals[i].from_normal(z[i]))
    }

    /// Inverse of [`GaussianCopulaGumbel::from_standard_normal`].
    pub fn to_standard_normal(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = DVector::from_fn(x.len(), |i, _| self.marginals[i].to_normal(x[i]));
        self.chol.solve_lower_triangular(&z).expect("cholesky factor has a positive diagonal")
    }
}

impl LogDensity for GaussianCopulaGumbel {
    fn dim(&self) -> usize {
        self.marginals.len()
    }

    fn family(&self) -> &'static str {
        "gaussian-copula-gumbel"
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        let d = self.dim();
        let mut z = DVector::zeros(d);
        let mut ln_f = DVector::zeros(d);
        let mut dln_f = DVector::zeros(d);
        for (i, m) in self.marginals.iter().enumerate() {
            let t = (x[i] - m.loc) / m.scale;
            let e = (-t).exp();
            ln_f[i] = -m.scale.ln() - t - e;
            dln_f[i] = (e - 1.0) / m.scale;
            z[i] = m.to_normal(x[i]);
        }
        let az = &self.prec_minus_id * &z;
        let log_p = -self.half_log_det - 0.5 * z.dot(&az) + ln_f.sum();
        let grad = DVector::from_fn(d, |i, _| {
            let dz_dx = (ln_f[i] - norm_ln_pdf(z[i])).exp();
            dln_f[i] - az[i] * dz_dx
        });
        DensityEval { log_p, grad }
    }

    fn mean(&self) -> Option<DVector<f64>> {
        Some(self.means.clone())
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        Ok((0..n).map(|_| self.from_standard_normal(&std_normal_vec(self.dim(), rng))).collect())
    }
}
