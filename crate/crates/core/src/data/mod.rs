//! Synthetic datasets, checkpoints, images and CSV output.

pub mod checkpoint;
pub mod csvlog;
mod gaussians;
pub mod pgm;
mod shapes;

pub use gaussians::gen_gaussians2d;
pub use shapes::{gen_shapes, render_shape, ShapeFactors, ShapesSample, SHAPE_SIDE};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which synthetic dataset to train on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// 32x32 rotated ellipses, flattened to 1024 values in `[-1, 1]`.
    Shapes,
    /// Eight Gaussian modes on a circle in the plane.
    Gaussians2d,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shapes" => Ok(Self::Shapes),
            "gaussians2d" | "8gaussians" => Ok(Self::Gaussians2d),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shapes => "shapes",
            Self::Gaussians2d => "gaussians2d",
        })
    }
}

/// Mixture parameters used for the 2-D dataset.
pub const GAUSSIAN_MODES: usize = 8;
pub const GAUSSIAN_RADIUS: f32 = 2.0;
pub const GAUSSIAN_SIGMA: f32 = 0.02;

/// Flattened samples plus the ground-truth factors that generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    /// `[n, data_dim]`
    pub samples: Tensor,
    /// `[n, n_factors]`
    pub factors: Tensor,
}

impl Dataset {
    /// Generate `n` samples of `kind` from `seed`.
    pub fn generate(kind: DatasetKind, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("dataset size must be at least 1".into()));
        }
        match kind {
            DatasetKind::Shapes => {
                let items = gen_shapes(n, seed);
                let samples: Vec<Vec<f32>> = items.iter().map(|s| s.image.clone()).collect();
                let factors: Vec<Vec<f32>> = items.iter().map(|s| s.factors.to_vec()).collect();
                Ok(Self {
                    kind,
                    samples: Tensor::from_rows(&samples)?,
                    factors: Tensor::from_rows(&factors)?,
                })
            }
            DatasetKind::Gaussians2d => {
                let pts = gen_gaussians2d(n, GAUSSIAN_MODES, GAUSSIAN_RADIUS, GAUSSIAN_SIGMA, seed);
                let rows: Vec<Vec<f32>> = pts.iter().map(|p| p.to_vec()).collect();
                let samples = Tensor::from_rows(&rows)?;
                // The coordinates are the generative factors, rescaled to about [-1, 1].
                let factors = samples.map(|v| v / GAUSSIAN_RADIUS);
                Ok(Self {
                    kind,
                    samples,
                    factors,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data_dim(&self) -> usize {
        self.samples.cols()
    }

    /// Number of training rows; the last 10% by index are held out.
    pub fn train_len(&self) -> usize {
        let held = self.len() / 10;
        self.len() - held
    }

    pub fn train(&self) -> Self {
        self.rows(0, self.train_len())
    }

    pub fn held_out(&self) -> Self {
        self.rows(self.train_len(), self.len())
    }

    fn rows(&self, start: usize, end: usize) -> Self {
        Self {
            kind: self.kind,
            samples: self.samples.rows_range(start, end),
            factors: self.factors.rows_range(start, end),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_holds_out_last_tenth() {
        let d = Dataset::generate(DatasetKind::Gaussians2d, 105, 0).unwrap();
        assert_eq!(d.train_len(), 95);
        assert_eq!(d.held_out().len(), 10);
        assert_eq!(d.held_out().samples.row_slice(0), d.samples.row_slice(95));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("shapes".parse::<DatasetKind>().unwrap(), DatasetKind::Shapes);
        assert!("faces".parse::<DatasetKind>().is_err());
    }
}
