//! `key = value` run files. Blank lines and `#` comments are ignored; keys use
//! the long flag names (`problem`, `estimator`, `reps`, `seed`, `out`,
//! `sigma`, `q`, `n`, `burnin`, `m`, `n-total`, `diag-mass`,
//! `curvature-threshold`, `parallelism`). Values here win over flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::run::{EstimatorKind, Overrides};
use crate::{Error, Result};

/// Settings read from a run file; unset keys stay `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub problem: Option<String>,
    pub estimator: Option<EstimatorKind>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub overrides: Overrides,
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config(format!("line {line}: bad value `{v}` for `{key}`: {e}")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: bad boolean `{v}` for `{key}`"))),
    }
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut f = RunFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, v) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`, got `{content}`")))?;
            let o = &mut f.overrides;
            match key.replace('_', "-").as_str() {
                "problem" => f.problem = Some(v.to_string()),
                "estimator" => f.estimator = Some(v.parse()?),
                "reps" => f.reps = Some(value(line, key, v)?),
                "seed" => f.seed = Some(value(line, key, v)?),
                "out" => f.out = Some(PathBuf::from(v)),
                "parallelism" => f.parallelism = Some(value(line, key, v)?),
                "sigma" => o.sigma = Some(value(line, key, v)?),
                "q" => o.q = Some(value(line, key, v)?),
                "n" => o.n = Some(value(line, key, v)?),
                "burnin" => o.burnin = Some(value(line, key, v)?),
                "m" => o.m = Some(value(line, key, v)?),
                "n-total" => o.n_total = Some(value(line, key, v)?),
                "diag-mass" => o.diag_mass = Some(boolean(line, key, v)?),
                "curvature-threshold" => o.curvature_threshold = Some(value(line, key, v)?),
                _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
            }
        }
        Ok(f)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Fills `base` with every override set in this file.
    pub fn apply(&self, base: &mut Overrides) {
        let o = &self.overrides;
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { base.$f = o.$f; } )* };
        }
        take!(sigma, q, n, burnin, m, n_total, diag_mass, curvature_threshold);
    }
}
