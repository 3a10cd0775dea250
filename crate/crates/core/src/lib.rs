//! Rare-event probability estimation by approximate sampling target with
//! post-processing adjustment (ASTPA), with gradient-based MCMC samplers,
//! inverse importance sampling and baseline estimators.

pub mod baselines;
pub mod bench;
mod error;

pub mod density;
pub mod discovery;
pub mod estimator;
pub mod hmc;
pub mod iis;
pub mod limit_state;
pub mod qnp;
mod serde_float;
pub mod special;
pub mod target;
pub mod transform;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result, Stage};

use rand::SeedableRng;

/// Random number generator used throughout; seeded from a single `u64`.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
