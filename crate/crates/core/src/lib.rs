//! Latently invertible autoencoder at desk scale.
//!
//! An additive coupling network `phi` sits between an encoder `f` and a
//! generator `g`. Stage 1 trains `phi^-1`, `g` and a Wasserstein critic as a
//! GAN from Gaussian `z`; stage 2 detaches `phi` and fits `f` against the
//! frozen generator. The metrics compare the intermediate space `y` with the
//! prior space `z`.

pub mod coupling;
pub mod data;
pub mod error;
pub mod inversion;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
