//! Evaluation metrics.
//!
//! Sample-set distances ([`mse`], [`swd`], [`ffd`]) and latent-geometry
//! probes ([`path_length`], [`lipschitz_ratio_stats`],
//! [`jacobian_isometry_probe`], [`path_straightness`]). Everything is
//! deterministic in its seed. Work is split into fixed chunks that are
//! evaluated on a pool of `LIA_THREADS` workers and reduced in chunk order,
//! so the thread count never changes a result.

mod distance;
mod latent;

pub use distance::{ffd, ffd_features, mse, swd};
pub use latent::{
    interpolate, jacobian_isometry_probe, lipschitz_ratio_stats, mean_perpendicular_deviation,
    model_isometry_probe, path_codes, path_length, path_length_pairs, path_straightness, sign_test_p,
    straightness_of_points, LipschitzStats,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::csvlog::write_csv;
use crate::error::{Error, Result};

/// Environment variable capping the metric worker threads.
pub const THREADS_ENV: &str = "LIA_THREADS";

/// Latent space a probe runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// Intermediate space, input of the generator.
    Y,
    /// Gaussian prior space, mapped to `y` by `phi^-1`.
    Z,
}

impl FromStr for Space {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y" => Ok(Space::Y),
            "z" => Ok(Space::Z),
            _ => Err(Error::Config(format!("space must be y or z, got {s:?}"))),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Y => "y",
            Space::Z => "z",
        })
    }
}

/// Where along the path the path-length probe samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathMode {
    /// Uniformly random position.
    Full,
    /// Both endpoints.
    End,
}

impl FromStr for PathMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PathMode::Full),
            "end" => Ok(PathMode::End),
            _ => Err(Error::Config(format!("mode must be full or end, got {s:?}"))),
        }
    }
}

impl fmt::Display for PathMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathMode::Full => "full",
            PathMode::End => "end",
        })
    }
}

/// One measured quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub space: Option<Space>,
    pub mode: Option<PathMode>,
}

impl MetricReport {
    pub fn new(name: &str, value: f64, n_samples: usize, seed: u64) -> Result<Self> {
        if !value.is_finite() || n_samples == 0 {
            return Err(Error::Metric(format!("{name}: value {value} over {n_samples} samples")));
        }
        Ok(Self {
            name: name.into(),
            value,
            n_samples,
            seed,
            space: None,
            mode: None,
        })
    }

    pub fn in_space(mut self, space: Space) -> Self {
        self.space = Some(space);
        self
    }

    pub fn with_mode(mut self, mode: PathMode) -> Self {
        self.mode = Some(mode);
        self
    }
}

/// CSV with columns `name,space,mode,value,n,seed`; absent tags are empty.
pub fn write_reports(path: impl AsRef<Path>, reports: &[MetricReport]) -> Result<()> {
    let tag = |o: Option<String>| o.unwrap_or_default();
    write_csv(
        path,
        &["name", "space", "mode", "value", "n", "seed"],
        reports.iter().map(|r| {
            vec![
                r.name.clone(),
                tag(r.space.map(|s| s.to_string())),
                tag(r.mode.map(|m| m.to_string())),
                r.value.to_string(),
                r.n_samples.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

/// Worker count from `LIA_THREADS`, defaulting to 1.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Evaluate `f` on every index in `0..n` using `threads` workers, returning
/// results in index order.
pub(crate) fn map_indexed<R, F>(n: usize, threads: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Metric(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}
