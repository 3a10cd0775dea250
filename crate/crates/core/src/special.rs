//! Scalar special functions shared by the densities, the target and the estimators.

use libm::erfc;
use statrs::function::erf::erfc_inv;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `1 - Φ(x)`, accurate in the upper tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * (LN_2PI + x * x)
}

/// Inverse of the standard normal CDF.
pub fn norm_ppf(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p > 0.5 {
        return norm_isf(1.0 - p);
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    refine(x, norm_cdf(x) - p)
}

// One Halley step on `Φ(x) = p` given the residual `Φ(x) - p`.
fn refine(x: f64, residual: f64) -> f64 {
    if !x.is_finite() || residual == 0.0 {
        return x;
    }
    let e = residual / norm_ln_pdf(x).exp();
    if !e.is_finite() {
        return x;
    }
    x - e / (1.0 + 0.5 * x * e)
}

/// `Φ⁻¹(1 - s)` computed from the survival probability `s` without forming `1 - s`.
pub fn norm_isf(s: f64) -> f64 {
    if s.is_nan() || !(0.0..=1.0).contains(&s) {
        return f64::NAN;
    }
    if s > 0.5 {
        return norm_ppf(1.0 - s);
    }
    let x = std::f64::consts::SQRT_2 * erfc_inv(2.0 * s);
    refine(x, s - norm_sf(x))
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + e^{-z})`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(v_i)`; returns `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln((1/n) Σ exp(v_i))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    log_sum_exp(values) - (values.len() as f64).ln()
}
