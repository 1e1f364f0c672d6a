//! Invertible network built from additive coupling layers.
//!
//! A layer splits `v = [top; bottom]` into halves and adds `tau` of one
//! half to the other. The inverse subtracts the same quantity, so the map is
//! exactly invertible up to floating-point rounding for any `tau`. Layers
//! alternate which half they modify.

use crate::error::{Error, Result};
use crate::nn::{BoundMlp, Mlp, OutputActivation};
use crate::rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Which half a layer modifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    /// `b' = b + tau(t)`
    Bottom,
    /// `t' = t + tau(b)`
    Top,
}

impl Parity {
    pub fn for_layer(i: usize) -> Self {
        if i % 2 == 0 {
            Parity::Bottom
        } else {
            Parity::Top
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer<T: Scalar = f32> {
    pub parity: Parity,
    /// Maps a half-vector (`dim / 2`) to a half-vector.
    pub tau: Mlp<T>,
}

/// `phi: y -> z` and its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingNet<T: Scalar = f32> {
    pub dim: usize,
    pub layers: Vec<CouplingLayer<T>>,
}

impl CouplingNet<f32> {
    /// Random coupling network whose `tau` output layers start at zero, so
    /// the initial map is the identity. Deterministic in `seed`.
    pub fn init(dim: usize, layers: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Dim(format!("coupling dimension must be even, got {dim}")));
        }
        if layers == 0 {
            return Err(Error::Config("coupling network needs at least one layer".into()));
        }
        let half = dim / 2;
        let mut r = rng::stream(seed, 0);
        let layers = (0..layers)
            .map(|i| CouplingLayer {
                parity: Parity::for_layer(i),
                tau: Mlp::init(&[half, hidden, hidden, half], OutputActivation::Identity, true, &mut r),
            })
            .collect();
        Ok(Self { dim, layers })
    }
}

impl<T: Scalar> CouplingNet<T> {
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundCoupling {
        BoundCoupling {
            dim: self.dim,
            layers: self.layers.iter().map(|l| (l.parity, l.tau.bind(tape))).collect(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.tau.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.tau.params_mut()).collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.tau.param_names(&format!("{prefix}.{i}")))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> CouplingNet<U> {
        CouplingNet {
            dim: self.dim,
            layers: self
                .layers
                .iter()
                .map(|l| CouplingLayer {
                    parity: l.parity,
                    tau: l.tau.cast(),
                })
                .collect(),
        }
    }

    /// `z = phi(y)` for `y: [batch, dim]`.
    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(y, true)
    }

    /// `y = phi^-1(z)`.
    pub fn inverse(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(z, false)
    }

    fn run(&self, v: &Tensor<T>, forward: bool) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(v.clone());
        let out = if forward {
            bound.forward(&mut tape, x)?
        } else {
            bound.inverse(&mut tape, x)?
        };
        Ok(tape.value(out).clone())
    }
}

/// A [`CouplingNet`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundCoupling {
    dim: usize,
    layers: Vec<(Parity, BoundMlp)>,
}

impl BoundCoupling {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, y: Var) -> Result<Var> {
        self.check(tape, y)?;
        let mut v = y;
        for (parity, tau) in &self.layers {
            v = self.step(tape, v, *parity, tau, true)?;
        }
        Ok(v)
    }

    pub fn inverse<T: Scalar>(&self, tape: &mut Tape<T>, z: Var) -> Result<Var> {
        self.check(tape, z)?;
        let mut v = z;
        for (parity, tau) in self.layers.iter().rev() {
            v = self.step(tape, v, *parity, tau, false)?;
        }
        Ok(v)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|(_, m)| m.vars()).collect()
    }

    fn check<T: Scalar>(&self, tape: &Tape<T>, v: Var) -> Result<()> {
        let s = tape.shape(v);
        if s.len() != 2 || s[1] != self.dim {
            return Err(Error::Dim(format!(
                "coupling network of dimension {} applied to {:?}",
                self.dim, s
            )));
        }
        Ok(())
    }

    fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        v: Var,
        parity: Parity,
        tau: &BoundMlp,
        forward: bool,
    ) -> Result<Var> {
        let half = self.dim / 2;
        let top = tape.slice(v, 1, 0, half)?;
        let bottom = tape.slice(v, 1, half, self.dim)?;
        let (fixed, moving) = match parity {
            Parity::Bottom => (top, bottom),
            Parity::Top => (bottom, top),
        };
        let shift = tau.forward(tape, fixed)?;
        let moved = if forward {
            tape.add(moving, shift)?
        } else {
            tape.sub(moving, shift)?
        };
        let parts = match parity {
            Parity::Bottom => [fixed, moved],
            Parity::Top => [moved, fixed],
        };
        Ok(tape.concat(&parts, 1)?)
    }
}
