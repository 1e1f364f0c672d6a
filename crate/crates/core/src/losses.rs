//! Training objectives, recorded on the tape.
//!
//! Networks are passed as closures `(tape, input) -> output` so the same
//! functions serve bound models and hand-built test critics alike.

use crate::tensor::{Result, Scalar, Tape, Var};

/// Loss weights. Defaults: `beta1 = 5e-5`, `beta2 = 0.1`, `gamma = 10`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the feature-space term in the reconstruction loss.
    pub beta1: f32,
    /// Weight of the reconstruction loss in the encoder objective.
    pub beta2: f32,
    /// R1 penalty coefficient.
    pub gamma: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 5e-5,
            beta2: 0.1,
            gamma: 10.0,
        }
    }
}

/// Batch mean of per-row Euclidean distances between `[batch, n]` tensors.
pub fn mean_l2_distance<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d)?;
    let per_row = tape.sum_axis(sq, 1)?;
    let norms = tape.sqrt(per_row)?;
    tape.mean(norms)
}

/// `||x - x_rec|| + beta1 * ||eps(x) - eps(x_rec)||`, each a non-squared L2
/// distance averaged over the batch.
pub fn recon_loss<T, F>(tape: &mut Tape<T>, x: Var, x_rec: Var, eps: F, beta1: T) -> Result<Var>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let pixel = mean_l2_distance(tape, x, x_rec)?;
    if beta1 == T::zero() {
        return Ok(pixel);
    }
    let fx = eps(tape, x)?;
    let fr = eps(tape, x_rec)?;
    let feat = mean_l2_distance(tape, fx, fr)?;
    let weighted = tape.scale(feat, beta1)?;
    tape.add(pixel, weighted)
}

/// R1 term `E ||grad_x c(x)||^2` over the rows of `real`.
///
/// The input gradient is taken with [`Tape::backward`], so the result can be
/// differentiated again with respect to the critic's parameters.
pub fn r1_penalty<T, C>(tape: &mut Tape<T>, critic: &C, real: Var) -> Result<Var>
where
    T: Scalar,
    C: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let scores = critic(tape, real)?;
    // Rows are independent, so the gradient of the sum is per-sample.
    let total = tape.sum(scores)?;
    let grad = tape.backward(total, &[real])?[0];
    let sq = tape.square(grad)?;
    let per_row = tape.sum_axis(sq, 1)?;
    tape.mean(per_row)
}

/// Wasserstein critic loss with R1 penalty on real samples:
/// `E[c(fake)] - E[c(real)] + gamma / 2 * E ||grad_x c(real)||^2`.
pub fn critic_loss<T, C>(tape: &mut Tape<T>, critic: &C, real: Var, fake: Var, gamma: T) -> Result<Var>
where
    T: Scalar,
    C: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let cf = critic(tape, fake)?;
    let cr = critic(tape, real)?;
    let mf = tape.mean(cf)?;
    let mr = tape.mean(cr)?;
    let gap = tape.sub(mf, mr)?;
    if gamma == T::zero() {
        return Ok(gap);
    }
    let pen = r1_penalty(tape, critic, real)?;
    let half_gamma = gamma * T::from_f64_lossy(0.5);
    let weighted = tape.scale(pen, half_gamma)?;
    tape.add(gap, weighted)
}

/// Generator-side Wasserstein term `-E[c(fake)]`.
pub fn adv_loss<T, C>(tape: &mut Tape<T>, critic: &C, fake: Var) -> Result<Var>
where
    T: Scalar,
    C: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let scores = critic(tape, fake)?;
    let m = tape.mean(scores)?;
    tape.neg(m)
}

/// Encoder objective `beta2 * recon_loss + adv_loss`.
pub fn encoder_objective<T, F, C>(
    tape: &mut Tape<T>,
    x: Var,
    x_rec: Var,
    eps: F,
    critic: &C,
    beta1: T,
    beta2: T,
) -> Result<Var>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
    C: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let rec = recon_loss(tape, x, x_rec, eps, beta1)?;
    let adv = adv_loss(tape, critic, x_rec)?;
    let weighted = tape.scale(rec, beta2)?;
    tape.add(weighted, adv)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over latent dimensions and
/// averaged over the batch.
pub fn kl_gaussian<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = tape.square(mu)?;
    let var = tape.exp(logvar)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, logvar)?;
    let per_dim = tape.sum_axis(b, 1)?;
    let dims = T::from_usize(tape.shape(mu)[1]).unwrap();
    // (sum_j (mu^2 + var - logvar) - dims) / 2, averaged over rows
    let s = tape.mean(per_dim)?;
    let shift = tape.leaf(crate::tensor::Tensor::scalar(dims));
    let centred = tape.sub(s, shift)?;
    tape.scale(centred, T::from_f64_lossy(0.5))
}
