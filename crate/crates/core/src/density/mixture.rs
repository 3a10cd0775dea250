use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{std_normal_vec, DensityEval, LogDensity};
use crate::special::{log_sum_exp, LN_2PI};
use crate::{Error, Result};

/// Covariance of one mixture component, stored with its factorization.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full { cov: DMatrix<f64>, chol: DMatrix<f64>, log_det: f64 },
    Diagonal { var: DVector<f64>, log_det: f64 },
}

impl Covariance {
    pub fn full(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::InvalidParameter("covariance must be square".into()));
        }
        let n = cov.nrows();
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * (1.0 + cov[(i, j)].abs()) {
                    return Err(Error::InvalidParameter("covariance must be symmetric".into()));
                }
            }
        }
        let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Covariance::Full { cov, chol, log_det })
    }

    pub fn diagonal(var: DVector<f64>) -> Result<Self> {
        if var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let log_det = var.iter().map(|v| v.ln()).sum();
        Ok(Covariance::Diagonal { var, log_det })
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Full { cov, .. } => cov.nrows(),
            Covariance::Diagonal { var, .. } => var.len(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Covariance::Diagonal { .. })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Full { cov, .. } => cov.clone(),
            Covariance::Diagonal { var, .. } => DMatrix::from_diagonal(var),
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            Covariance::Full { log_det, .. } | Covariance::Diagonal { log_det, .. } => *log_det,
        }
    }

    /// `Σ^{-1} v`
    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Full { chol, .. } => {
                let w = chol.solve_lower_triangular(v).expect("positive cholesky diagonal");
                chol.tr_solve_lower_triangular(&w).expect("positive cholesky diagonal")
            }
            Covariance::Diagonal { var, .. } => v.component_div(var),
        }
    }

    /// `v^T Σ^{-1} v`
    fn mahalanobis(&self, v: &DVector<f64>) -> f64 {
        match self {
            Covariance::Full { chol, .. } => {
                chol.solve_lower_triangular(v).expect("positive cholesky diagonal").norm_squared()
            }
            Covariance::Diagonal { var, .. } => v.iter().zip(var.iter()).map(|(a, s)| a * a / s).sum(),
        }
    }

    /// Maps a standard normal vector to `N(0, Σ)`.
    fn colour(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Full { chol, .. } => chol * u,
            Covariance::Diagonal { var, .. } => u.component_mul(&var.map(f64::sqrt)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

impl MixtureComponent {
    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let d = x.len() as f64;
        -0.5 * (d * LN_2PI + self.cov.log_det() + self.cov.mahalanobis(&(x - &self.mean)))
    }
}

/// Finite Gaussian mixture with full or diagonal component covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
    log_weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::InvalidParameter("mixture needs a component".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("mixture dimension must be positive".into()));
        }
        for c in &components {
            if c.mean.len() != dim || c.cov.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.mean.len().max(c.cov.dim()) });
            }
            if !(c.weight >= 0.0) || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidParameter("mixture weights must be nonnegative and means finite".into()));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, not 1")));
        }
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        Ok(GaussianMixture { dim, components, log_weights })
    }

    /// Single full-covariance Gaussian.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![MixtureComponent { weight: 1.0, mean, cov: Covariance::full(cov)? }])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn is_diagonal(&self) -> bool {
        self.components.iter().all(|c| c.cov.is_diagonal())
    }

    /// Per-component `log w_k + log N(x; μ_k, Σ_k)`.
    pub fn component_log_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| if *lw == f64::NEG_INFINITY { *lw } else { lw + c.log_pdf(x) })
            .collect()
    }

    /// Log-density at `x`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let mut terms = self.component_log_terms(x);
        // a fixed summation order makes the value independent of component order
        terms.sort_by(f64::total_cmp);
        log_sum_exp(&terms)
    }

    /// Draws one point together with the index of the component it came from.
    pub fn sample_one(&self, rng: &mut dyn RngCore) -> (usize, DVector<f64>) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let c = &self.components[k];
        (k, &c.mean + c.cov.colour(&std_normal_vec(self.dim, rng)))
    }
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn family(&self) -> &'static str {
        "gaussian-mixture"
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        let terms = self.component_log_terms(x);
        let log_p = self.log_pdf(x);
        let mut grad = DVector::zeros(self.dim);
        for (c, t) in self.components.iter().zip(&terms) {
            let r = (t - log_p).exp();
            if r > 0.0 {
                grad -= c.cov.solve(&(x - &c.mean)) * r;
            }
        }
        DensityEval { log_p, grad }
    }

    fn mean(&self) -> Option<DVector<f64>> {
        Some(self.components.iter().fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight))
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        Ok((0..n).map(|_| self.sample_one(rng).1).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::fd_check;

    fn two_component() -> GaussianMixture {
        GaussianMixture::new(vec![
            MixtureComponent {
                weight: 0.3,
                mean: DVector::from_vec(vec![1.0, -1.0]),
                cov: Covariance::full(DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0])).unwrap(),
            },
            MixtureComponent {
                weight: 0.7,
                mean: DVector::from_vec(vec![-2.0, 0.5]),
                cov: Covariance::diagonal(DVector::from_vec(vec![0.5, 3.0])).unwrap(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn standard_normal_at_origin() {
        let g = GaussianMixture::gaussian(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!((g.log_pdf(&DVector::zeros(2)) + LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn identical_components_collapse() {
        let c = MixtureComponent {
            weight: 0.5,
            mean: DVector::from_vec(vec![0.2, 0.1]),
            cov: Covariance::full(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0])).unwrap(),
        };
        let two = GaussianMixture::new(vec![c.clone(), c.clone()]).unwrap();
        let one = GaussianMixture::new(vec![MixtureComponent { weight: 1.0, ..c }]).unwrap();
        let x = DVector::from_vec(vec![0.7, -1.1]);
        assert!((two.log_pdf(&x) - one.log_pdf(&x)).abs() < 1e-14);
    }

    #[test]
    fn matches_direct_sum() {
        let g = two_component();
        let s: DMatrix<f64> = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let s_inv = s.clone().try_inverse().unwrap();
        let det = s.determinant();
        for p in [[0.0, 0.0], [1.0, 1.0], [-2.0, 0.3], [3.0, -2.0], [0.5, 2.5]] {
            let x: DVector<f64> = DVector::from_vec(p.to_vec());
            let v1 = &x - DVector::from_vec(vec![1.0, -1.0]);
            let q1 = (v1.transpose() * &s_inv * &v1)[(0, 0)];
            let f1 = (-0.5 * q1).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
            let v2 = &x - DVector::from_vec(vec![-2.0, 0.5]);
            let f2 = (-0.5 * (v2[0] * v2[0] / 0.5 + v2[1] * v2[1] / 3.0)).exp()
                / (2.0 * std::f64::consts::PI * 1.5f64.sqrt());
            let direct = (0.3 * f1 + 0.7 * f2).ln();
            assert!((g.log_pdf(&x) - direct).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn stable_far_in_the_tail() {
        let g = GaussianMixture::gaussian(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let x = DVector::from_element(1, 38.6);
        let v = g.log_pdf(&x);
        assert!((v - (-0.5 * LN_2PI - 0.5 * 38.6 * 38.6)).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = two_component();
        let mut rng = crate::rng(8);
        for _ in 0..100 {
            let x = std_normal_vec(2, &mut rng) * 2.0;
            fd_check(|p| g.eval(p).unwrap(), &x, 1e-5);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(matches!(
            Covariance::full(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            Err(Error::NotPositiveDefinite)
        ));
        let c = MixtureComponent { weight: 0.6, mean: DVector::zeros(1), cov: Covariance::diagonal(DVector::from_element(1, 1.0)).unwrap() };
        assert!(GaussianMixture::new(vec![c]).is_err());
    }
}
