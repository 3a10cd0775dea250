use nalgebra::DVector;
use rand_distr::{Distribution, Normal};

use super::{DensityEval, LogDensity};
use crate::{Error, Result};

pub const RING_DATA_LEN: usize = 100;
pub const RING_DATA_MEAN: f64 = 2.0;
pub const RING_DATA_SD: f64 = 4.0;
/// Seed that produced the bundled observation fixture.
pub const RING_DATA_SEED: u64 = 541;

const RING_FIXTURE: &str = include_str!("../../data/ring_y.txt");

/// Draws the synthetic observations `y_j ~ N(mean, sd²)`.
pub fn generate_ring_data(seed: u64, n: usize, mean: f64, sd: f64) -> Result<Vec<f64>> {
    let normal = Normal::new(mean, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = crate::rng(seed);
    Ok((0..n).map(|_| normal.sample(&mut rng)).collect())
}

/// One value per line with 17 significant digits.
pub fn format_ring_fixture(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.16e}\n")).collect()
}

pub fn parse_ring_fixture(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<f64>().map_err(|e| Error::Config(format!("bad fixture value {l:?}: {e}"))))
        .collect()
}

/// Unnormalized posterior `exp(-s/2 - Σ (y_j - s)² / (2σ_Y²))` with `s = Σ x_i²`,
/// i.e. a Gaussian likelihood on the squared radius under a standard normal prior.
///
/// Constant factors of the likelihood and prior are dropped. An optional log
/// normalizer `log C_π` turns it into a proper density.
#[derive(Debug, Clone, PartialEq)]
pub struct RingPosterior {
    dim: usize,
    data: Vec<f64>,
    sigma_y: f64,
    sum_y: f64,
    sum_y2: f64,
    log_normalizer: Option<f64>,
}

impl RingPosterior {
    pub fn new(dim: usize, data: Vec<f64>, sigma_y: f64) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::InvalidParameter("ring posterior needs d ≥ 1 and data".into()));
        }
        if !(sigma_y > 0.0) || data.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidParameter("invalid ring posterior data or sigma".into()));
        }
        let sum_y = data.iter().sum();
        let sum_y2 = data.iter().map(|y| y * y).sum();
        Ok(RingPosterior { dim, data, sigma_y, sum_y, sum_y2, log_normalizer: None })
    }

    /// Posterior built on the bundled observation fixture.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(dim, parse_ring_fixture(RING_FIXTURE)?, RING_DATA_SD)
    }

    pub fn with_log_normalizer(mut self, log_c: f64) -> Result<Self> {
        if !log_c.is_finite() {
            return Err(Error::NonFinite);
        }
        self.log_normalizer = Some(log_c);
        Ok(self)
    }

    pub fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    /// Unnormalized log-density as a function of `s = Σ x_i²`, with its derivative.
    pub fn log_kernel_of_s(&self, s: f64) -> (f64, f64) {
        let n = self.data.len() as f64;
        let inv = 0.5 / (self.sigma_y * self.sigma_y);
        let ss = self.sum_y2 - 2.0 * s * self.sum_y + n * s * s;
        (-0.5 * s - inv * ss, -0.5 - inv * (2.0 * n * s - 2.0 * self.sum_y))
    }
}

impl LogDensity for RingPosterior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn family(&self) -> &'static str {
        "ring-posterior"
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DensityEval {
        let s = x.norm_squared();
        let (log_p, dlog_ds) = self.log_kernel_of_s(s);
        DensityEval {
            log_p: log_p - self.log_normalizer.unwrap_or(0.0),
            grad: x * (2.0 * dlog_ds),
        }
    }

    fn is_normalized(&self) -> bool {
        self.log_normalizer.is_some()
    }
}
