//! Latent-code optimization: find the code whose generated sample
//! reconstructs a target, in `y` directly or in `z` through `phi^-1`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::recon_loss;
use crate::metrics::Space;
use crate::models::LiaModel;
use crate::optim::Adam;
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

/// Starting point of a y-space inversion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// `phi^-1(z)` for a Gaussian `z`.
    Random,
    /// The average code, see [`mean_latent`].
    Mean,
    /// The encoder's code `f(x)`.
    Encoder,
}

impl FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitMode::Random),
            "mean" => Ok(InitMode::Mean),
            "encoder" => Ok(InitMode::Encoder),
            _ => Err(Error::Config(format!("init must be random, mean or encoder, got {s:?}"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Random => "random",
            InitMode::Mean => "mean",
            InitMode::Encoder => "encoder",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionOptions {
    pub steps: usize,
    pub lr: f32,
    /// Seed for random initialization and the mean code.
    pub seed: u64,
    /// Consecutive loss increases tolerated before rolling back to the best
    /// code and halving the step size.
    pub patience: usize,
    /// Samples averaged by the mean initialization.
    pub mean_samples: usize,
    /// Feature weight of the reconstruction loss.
    pub beta1: f32,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            seed: 0,
            patience: 10,
            mean_samples: 1000,
            beta1: 5e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// Optimized code `[1, latent_dim]`, in the space that was searched.
    pub latent: Tensor,
    /// Loss before each step, then the loss of the returned code; length
    /// `steps + 1`.
    pub loss_curve: Vec<f32>,
    pub space: Space,
    /// Initialization of a y-space run; z-space runs start from a given code.
    pub init_mode: Option<InitMode>,
}

impl InversionResult {
    pub fn final_loss(&self) -> f32 {
        *self.loss_curve.last().expect("loss curve holds the initial loss")
    }
}

/// Mean of `phi^-1(z_i)` over `n` Gaussian samples, as `[1, latent_dim]`.
pub fn mean_latent(model: &LiaModel, n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Config("mean_latent needs at least one sample".into()));
    }
    let z = rng::gaussian_tensor(&mut rng::stream(seed, 30), &[n, model.dims.latent_dim]);
    Ok(model.z_to_y(&z)?.mean_rows())
}

/// Starting code for a y-space inversion of `x`.
pub fn initial_code(model: &LiaModel, x: &Tensor, mode: InitMode, opts: &InversionOptions) -> Result<Tensor> {
    match mode {
        InitMode::Random => {
            let z = rng::gaussian_tensor(&mut rng::stream(opts.seed, 31), &[1, model.dims.latent_dim]);
            model.z_to_y(&z)
        }
        InitMode::Mean => mean_latent(model, opts.mean_samples, opts.seed),
        InitMode::Encoder => model.encode(x),
    }
}

/// Reconstruction loss of `x` against `g(y)`, with `y = code` in y-space or
/// `y = phi^-1(code)` in z-space, and its gradient with respect to `code`.
fn loss_and_grad(model: &LiaModel, space: Space, x: &Tensor, code: &Tensor, beta1: f32) -> Result<(f32, Tensor)> {
    let mut tape = Tape::new();
    let bg = model.g.bind(&mut tape);
    let be = model.eps.bind(&mut tape);
    let c = tape.leaf(code.clone());
    let y = match space {
        Space::Y => c,
        Space::Z => model.phi.bind(&mut tape).inverse(&mut tape, c)?,
    };
    let xr = bg.forward(&mut tape, y)?;
    let xv = tape.leaf(x.clone());
    let loss = recon_loss(&mut tape, xv, xr, |t: &mut Tape, v: Var| be.forward(t, v), beta1)?;
    let value = tape.value(loss).item();
    let grad = tape.gradients(loss, &[c])?.remove(0);
    Ok((value, grad))
}

fn check_target(model: &LiaModel, x: &Tensor) -> Result<()> {
    if x.shape() != [1, model.dims.data_dim] {
        return Err(Error::Dim(format!(
            "inversion target must be [1, {}], got {:?}",
            model.dims.data_dim,
            x.shape()
        )));
    }
    Ok(())
}

/// Safeguarded Adam descent from `start`. After `patience` consecutive
/// increases the iterate returns to the best code so far and the step size
/// halves. The best code is returned, so the final loss never exceeds the
/// initial one.
fn descend(model: &LiaModel, space: Space, x: &Tensor, start: Tensor, opts: &InversionOptions) -> Result<(Tensor, Vec<f32>)> {
    let mut adam = Adam::with_moments(opts.lr, 0.9, 0.999, 1e-8);
    let mut code = start;
    let mut curve = Vec::with_capacity(opts.steps + 1);
    let mut best = (f32::INFINITY, code.clone());
    let mut streak = 0;
    for _ in 0..opts.steps {
        let (loss, grad) = loss_and_grad(model, space, x, &code, opts.beta1)?;
        if let Some(&prev) = curve.last() {
            streak = if loss > prev { streak + 1 } else { 0 };
        }
        curve.push(loss);
        if loss < best.0 {
            best = (loss, code.clone());
        }
        if streak >= opts.patience {
            code = best.1.clone();
            adam.reset();
            adam.lr *= 0.5;
            streak = 0;
            continue;
        }
        adam.step(vec![&mut code], &[grad]);
    }
    let (last, _) = loss_and_grad(model, space, x, &code, opts.beta1)?;
    if last <= best.0 {
        curve.push(last);
        Ok((code, curve))
    } else {
        curve.push(best.0);
        Ok((best.1, curve))
    }
}

/// Optimize `y` so that `g(y)` reconstructs `x` (`[1, data_dim]`).
pub fn invert_y(model: &LiaModel, x: &Tensor, init: InitMode, opts: &InversionOptions) -> Result<InversionResult> {
    check_target(model, x)?;
    let y0 = initial_code(model, x, init, opts)?;
    let (latent, loss_curve) = descend(model, Space::Y, x, y0, opts)?;
    Ok(InversionResult {
        latent,
        loss_curve,
        space: Space::Y,
        init_mode: Some(init),
    })
}

/// Optimize `z` so that `g(phi^-1(z))` reconstructs `x`, starting from
/// `z0 = phi(y0)`.
pub fn invert_z(model: &LiaModel, x: &Tensor, y0: &Tensor, opts: &InversionOptions) -> Result<InversionResult> {
    check_target(model, x)?;
    let z0 = model.y_to_z(y0)?;
    let (latent, loss_curve) = descend(model, Space::Z, x, z0, opts)?;
    Ok(InversionResult {
        latent,
        loss_curve,
        space: Space::Z,
        init_mode: None,
    })
}
