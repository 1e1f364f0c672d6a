//! Desk-scale networks: encoder `f`, coupling network `phi`, generator `g`,
//! critic `c`, feature extractor `eps`, and the variational encoder used by
//! the baseline.

use crate::coupling::CouplingNet;
use crate::data::checkpoint::{Checkpoint, CheckpointError};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BoundMlp, Mlp, OutputActivation};
use crate::optim::Adam;
use crate::rng;
use crate::tensor::{self, Scalar, Tape, Tensor, Var};

/// Hidden widths of the feature extractor.
pub const FEATURE_WIDTHS: [usize; 2] = [64, 32];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelDims {
    /// Flattened sample size.
    pub data_dim: usize,
    /// Dimension of both `y` and `z`. Must be even.
    pub latent_dim: usize,
    /// Width of the hidden layers of `f`, `g` and `c`.
    pub hidden: usize,
    /// Hidden layers per network.
    pub depth: usize,
    /// Generator output is `output_scale * tanh(.)`.
    pub output_scale: f32,
    pub coupling_layers: usize,
    pub coupling_hidden: usize,
}

impl ModelDims {
    /// 32x32 shapes.
    pub fn shapes() -> Self {
        Self {
            data_dim: 1024,
            latent_dim: 16,
            hidden: 128,
            depth: 2,
            output_scale: 1.0,
            coupling_layers: 8,
            coupling_hidden: 16,
        }
    }

    /// Points in the plane.
    pub fn gaussians2d() -> Self {
        Self {
            data_dim: 2,
            latent_dim: 2,
            hidden: 128,
            depth: 2,
            output_scale: 2.5,
            coupling_layers: 8,
            coupling_hidden: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 || self.latent_dim % 2 != 0 {
            return bad(format!("latent_dim must be even and positive, got {}", self.latent_dim));
        }
        if self.latent_dim > self.data_dim {
            return bad(format!(
                "latent_dim {} exceeds data_dim {}",
                self.latent_dim, self.data_dim
            ));
        }
        if self.hidden == 0 || self.depth == 0 || self.coupling_layers == 0 || self.coupling_hidden == 0 {
            return bad("hidden, depth and coupling sizes must be positive".into());
        }
        if !(self.output_scale > 0.0) {
            return bad(format!("output_scale must be positive, got {}", self.output_scale));
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.hidden).take(self.depth));
        w.push(output);
        w
    }

    fn to_tensor(self) -> Tensor {
        let v = [
            self.data_dim as f32,
            self.latent_dim as f32,
            self.hidden as f32,
            self.depth as f32,
            self.output_scale,
            self.coupling_layers as f32,
            self.coupling_hidden as f32,
        ];
        Tensor::new([v.len()], v.to_vec()).unwrap()
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != 7 {
            return Err(Error::Config(format!("meta.dims has {} entries, want 7", d.len())));
        }
        let dims = Self {
            data_dim: d[0] as usize,
            latent_dim: d[1] as usize,
            hidden: d[2] as usize,
            depth: d[3] as usize,
            output_scale: d[4],
            coupling_layers: d[5] as usize,
            coupling_hidden: d[6] as usize,
        };
        dims.validate()?;
        Ok(dims)
    }
}

/// Encoder, coupling network, generator, critic and feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct LiaModel {
    pub dims: ModelDims,
    /// Encoder `x -> y`.
    pub f: Mlp,
    /// Coupling network `y -> z`.
    pub phi: CouplingNet,
    /// Generator `y -> x`.
    pub g: Mlp,
    /// Critic `x -> score`.
    pub c: Mlp,
    /// Frozen feature extractor `x -> features`.
    pub eps: Mlp,
}

const META_DIMS: &str = "meta.dims";

/// Scale applied to the generator's output-layer weights at init.
pub const GENERATOR_OUTPUT_GAIN: f32 = 0.1;

impl LiaModel {
    /// Fresh model; the feature extractor is random until pretrained.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let leaky = OutputActivation::LeakyRelu;
        let tanh = OutputActivation::Tanh {
            scale: dims.output_scale,
        };
        let d = dims.latent_dim;
        let mut g = Mlp::init(&dims.widths(d, dims.data_dim), tanh, false, &mut rng::stream(seed, 2));
        // Keep tanh out of saturation at init; saturated pixels get almost no
        // gradient and survive training as speckle.
        for w in g.layers.last_mut().unwrap().weight.data_mut() {
            *w *= GENERATOR_OUTPUT_GAIN;
        }
        Ok(Self {
            dims,
            f: Mlp::init(&dims.widths(dims.data_dim, d), OutputActivation::Identity, false, &mut rng::stream(seed, 1)),
            phi: CouplingNet::init(d, dims.coupling_layers, dims.coupling_hidden, seed)?,
            g,
            c: Mlp::init(&dims.widths(dims.data_dim, 1), OutputActivation::Identity, false, &mut rng::stream(seed, 3)),
            eps: Mlp::init(
                &[dims.data_dim, FEATURE_WIDTHS[0], FEATURE_WIDTHS[1]],
                leaky,
                false,
                &mut rng::stream(seed, 4),
            ),
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.eps.out_dim()
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        Ok(self.f.eval(x)?)
    }

    pub fn generate(&self, y: &Tensor) -> Result<Tensor> {
        self.check_latent(y)?;
        Ok(self.g.eval(y)?)
    }

    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        Ok(self.c.eval(x)?)
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        Ok(self.eps.eval(x)?)
    }

    /// `z = phi(y)`
    pub fn y_to_z(&self, y: &Tensor) -> Result<Tensor> {
        self.phi.forward(y)
    }

    /// `y = phi^-1(z)`
    pub fn z_to_y(&self, z: &Tensor) -> Result<Tensor> {
        self.phi.inverse(z)
    }

    /// `g(f(x))`, bypassing the coupling network.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.generate(&self.encode(x)?)
    }

    fn check_data(&self, x: &Tensor) -> Result<()> {
        check_cols("data", x, self.dims.data_dim)
    }

    fn check_latent(&self, y: &Tensor) -> Result<()> {
        check_cols("latent", y, self.dims.latent_dim)
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, m) in [("f", &self.f), ("g", &self.g), ("c", &self.c), ("eps", &self.eps)] {
            out.extend(m.param_names(prefix).into_iter().zip(m.params()));
        }
        out.extend(self.phi.param_names("phi").into_iter().zip(self.phi.params()));
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck: Checkpoint = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        ck.insert(META_DIMS.into(), self.dims.to_tensor());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck
            .get(META_DIMS)
            .ok_or_else(|| CheckpointError::Missing(META_DIMS.into()))?;
        let dims = ModelDims::from_tensor(meta)?;
        let mut m = Self::init(dims, 0)?;
        fill(&mut m.f, "f", ck)?;
        fill(&mut m.g, "g", ck)?;
        fill(&mut m.c, "c", ck)?;
        fill(&mut m.eps, "eps", ck)?;
        let names = m.phi.param_names("phi");
        for (name, p) in names.iter().zip(m.phi.params_mut()) {
            load_param(name, p, ck)?;
        }
        Ok(m)
    }
}

fn check_cols(what: &str, t: &Tensor, want: usize) -> Result<()> {
    if t.shape().len() != 2 || t.shape()[1] != want {
        return Err(Error::Dim(format!("{what} input must be [batch, {want}], got {:?}", t.shape())));
    }
    Ok(())
}

fn load_param(name: &str, p: &mut Tensor, ck: &Checkpoint) -> Result<()> {
    let t = ck.get(name).ok_or_else(|| CheckpointError::Missing(name.into()))?;
    if t.shape() != p.shape() {
        return Err(CheckpointError::BadTensor {
            name: name.into(),
            detail: format!("shape {:?}, model expects {:?}", t.shape(), p.shape()),
        }
        .into());
    }
    *p = t.clone();
    Ok(())
}

pub(crate) fn fill(m: &mut Mlp, prefix: &str, ck: &Checkpoint) -> Result<()> {
    let names = m.param_names(prefix);
    for (name, p) in names.iter().zip(m.params_mut()) {
        load_param(name, p, ck)?;
    }
    Ok(())
}

/// Train the feature extractor to regress the dataset's generative factors
/// through a throwaway linear head. Returns the loss per step.
pub fn pretrain_features(eps: &mut Mlp, data: &Dataset, steps: usize, batch: usize, seed: u64) -> Result<Vec<f32>> {
    let n_factors = data.factors.cols();
    let mut r = rng::stream(seed, 40);
    let mut head = Mlp::init(&[eps.out_dim(), n_factors], OutputActivation::Identity, false, &mut r);
    let mut opt = Adam::with_moments(1e-3, 0.9, 0.999, 1e-8);
    let train = data.train();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let idx = rng::batch_indices(&mut r, train.len(), batch);
        let mut tape = Tape::new();
        let be = eps.bind(&mut tape);
        let bh = head.bind(&mut tape);
        let x = tape.leaf(train.samples.select_rows(&idx));
        let target = tape.leaf(train.factors.select_rows(&idx));
        let loss = (|| -> tensor::Result<Var> {
            let h = be.forward(&mut tape, x)?;
            let pred = bh.forward(&mut tape, h)?;
            let d = tape.sub(pred, target)?;
            let sq = tape.square(d)?;
            tape.mean(sq)
        })()
        .map_err(|source| Error::Diverged { step, source })?;
        losses.push(tape.value(loss).item());
        let mut vars = be.vars();
        vars.extend(bh.vars());
        let grads = tape.gradients(loss, &vars)?;
        let mut params = eps.params_mut();
        params.extend(head.params_mut());
        opt.step(params, &grads);
    }
    Ok(losses)
}

/// Variational encoder `x -> (mu, logvar)` for the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeEncoder {
    pub latent_dim: usize,
    pub net: Mlp,
}

impl VaeEncoder {
    pub fn init(dims: &ModelDims, seed: u64) -> Self {
        Self {
            latent_dim: dims.latent_dim,
            net: Mlp::init(
                &dims.widths(dims.data_dim, 2 * dims.latent_dim),
                OutputActivation::Identity,
                false,
                &mut rng::stream(seed, 5),
            ),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.net
            .param_names("vae")
            .into_iter()
            .zip(self.net.params().into_iter().cloned())
            .collect()
    }
}

/// `mu + exp(logvar / 2) * noise`
pub fn reparameterize<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var, noise: Var) -> tensor::Result<Var> {
    let half = tape.scale(logvar, T::from_f64_lossy(0.5))?;
    let std = tape.exp(half)?;
    let spread = tape.mul(std, noise)?;
    tape.add(mu, spread)
}

/// Run the bound variational encoder; `noise ~ N(0, I)` is supplied by the
/// caller. Returns `(mu, logvar, z_sample)`.
pub fn vae_encoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    net: &BoundMlp,
    latent_dim: usize,
    x: Var,
    noise: Var,
) -> tensor::Result<(Var, Var, Var)> {
    let out = net.forward(tape, x)?;
    let mu = tape.slice(out, 1, 0, latent_dim)?;
    let logvar = tape.slice(out, 1, latent_dim, 2 * latent_dim)?;
    let z = reparameterize(tape, mu, logvar, noise)?;
    Ok((mu, logvar, z))
}

/// A generator with an invertible latent map and a feature extractor; what
/// the metrics and inversion routines need from a model.
pub trait LatentModel: Sync {
    fn latent_dim(&self) -> usize;
    /// `g(y)`
    fn generate(&self, y: &Tensor) -> Result<Tensor>;
    /// `phi^-1(z)`
    fn z_to_y(&self, z: &Tensor) -> Result<Tensor>;
    /// `phi(y)`
    fn y_to_z(&self, y: &Tensor) -> Result<Tensor>;
    /// `eps(x)`
    fn features(&self, x: &Tensor) -> Result<Tensor>;
}

impl LatentModel for LiaModel {
    fn latent_dim(&self) -> usize {
        self.dims.latent_dim
    }
    fn generate(&self, y: &Tensor) -> Result<Tensor> {
        LiaModel::generate(self, y)
    }
    fn z_to_y(&self, z: &Tensor) -> Result<Tensor> {
        LiaModel::z_to_y(self, z)
    }
    fn y_to_z(&self, y: &Tensor) -> Result<Tensor> {
        LiaModel::y_to_z(self, y)
    }
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        LiaModel::features(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetKind;
    use crate::tensor::grad_check;

    fn small_dims() -> ModelDims {
        ModelDims {
            data_dim: 12,
            latent_dim: 4,
            hidden: 8,
            depth: 2,
            output_scale: 1.0,
            coupling_layers: 2,
            coupling_hidden: 4,
        }
    }

    #[test]
    fn dims_validation() {
        let mut d = small_dims();
        d.latent_dim = 5;
        assert!(d.validate().is_err());
        d.latent_dim = 14;
        assert!(d.validate().is_err());
        assert!(ModelDims::shapes().validate().is_ok());
        assert!(ModelDims::gaussians2d().validate().is_ok());
    }

    #[test]
    fn zero_final_encoder_layer_outputs_zero() {
        let mut m = LiaModel::init(small_dims(), 0).unwrap();
        let last = m.f.layers.last_mut().unwrap();
        last.weight = Tensor::zeros(last.weight.shape().to_vec());
        let x = rng::gaussian_tensor(&mut rng::stream(1, 0), &[3, 12]);
        assert_eq!(m.encode(&x).unwrap(), Tensor::zeros([3, 4]));
    }

    #[test]
    fn encoder_is_deterministic_and_batch_consistent() {
        let m = LiaModel::init(small_dims(), 3).unwrap();
        let x = rng::gaussian_tensor(&mut rng::stream(2, 0), &[2, 12]);
        let y = m.encode(&x).unwrap();
        assert_eq!(y, m.encode(&x).unwrap());
        let y0 = m.encode(&x.rows_range(0, 1)).unwrap();
        let y1 = m.encode(&x.rows_range(1, 2)).unwrap();
        assert_eq!(Tensor::vstack(&[y0, y1]).unwrap(), y);
        assert!(m.encode(&Tensor::zeros([2, 11])).is_err());
    }

    #[test]
    fn generator_with_zero_weights_outputs_bias() {
        let mut m = LiaModel::init(small_dims(), 0).unwrap();
        for l in &mut m.g.layers {
            l.weight = Tensor::zeros(l.weight.shape().to_vec());
        }
        let last = m.g.layers.last_mut().unwrap();
        last.bias = Tensor::full([1, 12], 0.5);
        let y = rng::gaussian_tensor(&mut rng::stream(1, 0), &[4, 4]);
        let x = m.generate(&y).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.5f32.tanh()));
    }

    #[test]
    fn roundtrip_shape_and_frozen_features() {
        let m = LiaModel::init(small_dims(), 1).unwrap();
        let x = rng::gaussian_tensor(&mut rng::stream(5, 0), &[3, 12]);
        assert_eq!(m.reconstruct(&x).unwrap().shape(), x.shape());
        assert_eq!(m.features(&x).unwrap(), m.features(&x).unwrap());
        let s = m.discriminate(&x).unwrap();
        assert_eq!(s.shape(), &[3, 1]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = LiaModel::init(small_dims(), 9).unwrap();
        let ck = m.to_checkpoint();
        let back = LiaModel::from_checkpoint(&ck).unwrap();
        assert_eq!(back, m);
        let mut broken = ck.clone();
        broken.remove("g.0.weight");
        assert!(LiaModel::from_checkpoint(&broken).is_err());
    }

    #[test]
    fn reparameterization_cases() {
        let mut t = Tape::<f32>::new();
        let leaf = |t: &mut Tape<f32>, v: f32| t.leaf(Tensor::new([1, 1], vec![v]).unwrap());
        let (mu, lv, n) = (leaf(&mut t, 1.0), leaf(&mut t, 4f32.ln()), leaf(&mut t, 1.0));
        let z = reparameterize(&mut t, mu, lv, n).unwrap();
        assert!((t.value(z).item() - 3.0).abs() < 1e-6);

        let zero = leaf(&mut t, 0.0);
        let n = leaf(&mut t, -0.7);
        let z = reparameterize(&mut t, zero, zero, n).unwrap();
        assert_eq!(t.value(z).item(), -0.7);
        let mu = leaf(&mut t, 2.5);
        let z = reparameterize(&mut t, mu, lv, zero).unwrap();
        assert_eq!(t.value(z).item(), 2.5);
    }

    #[test]
    fn vae_forward_shapes() {
        let dims = small_dims();
        let vae = VaeEncoder::init(&dims, 0);
        let mut t = Tape::<f32>::new();
        let b = vae.net.bind(&mut t);
        let x = t.leaf(Tensor::ones([3, 12]));
        let noise = t.leaf(Tensor::zeros([3, 4]));
        let (mu, _lv, z) = vae_encoder_forward(&mut t, &b, 4, x, noise).unwrap();
        assert_eq!(t.shape(z), &[3, 4]);
        assert_eq!(t.value(z), t.value(mu));
    }

    #[test]
    fn forward_passes_pass_grad_check() {
        let m = LiaModel::init(small_dims(), 4).unwrap();
        let x = rng::gaussian_tensor(&mut rng::stream(8, 0), &[3, 12]).cast::<f64>();
        let y = rng::gaussian_tensor(&mut rng::stream(9, 0), &[3, 4]).cast::<f64>();
        for net in [&m.f, &m.c, &m.eps] {
            let net = net.cast::<f64>();
            let err = grad_check(
                |t, v| -> tensor::Result<Var> {
                    let b = net.bind(t);
                    let o = b.forward(t, v)?;
                    let s = t.square(o)?;
                    t.sum(s)
                },
                &x,
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "{err}");
        }
        let g = m.g.cast::<f64>();
        let err = grad_check(
            |t, v| -> tensor::Result<Var> {
                let b = g.bind(t);
                let o = b.forward(t, v)?;
                t.sum(o)
            },
            &y,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn feature_pretraining_reduces_loss() {
        let data = Dataset::generate(DatasetKind::Shapes, 200, 0).unwrap();
        let mut m = LiaModel::init(ModelDims::shapes(), 0).unwrap();
        let losses = pretrain_features(&mut m.eps, &data, 150, 32, 0).unwrap();
        let head: f32 = losses[..10].iter().sum::<f32>() / 10.0;
        let tail: f32 = losses[losses.len() - 10..].iter().sum::<f32>() / 10.0;
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }
}
