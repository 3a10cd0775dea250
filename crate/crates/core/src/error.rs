use std::fmt;

use thiserror::Error;

/// Pipeline stage names used to tag failures coming out of [`crate::estimator::run_astpa`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Target,
    Discovery,
    Sampling,
    Shifted,
    Fit,
    Iis,
    Combine,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Target => "target construction",
            Stage::Discovery => "rare event discovery",
            Stage::Sampling => "sampling",
            Stage::Shifted => "shifted estimate",
            Stage::Fit => "mixture fit",
            Stage::Iis => "inverse importance sampling",
            Stage::Combine => "combination",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("family `{0}` has no direct sampler")]
    NoDirectSampler(&'static str),
    #[error("point lies outside the support: {0}")]
    OutOfSupport(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("mixture fit failure: {0}")]
    Fit(String),
    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
