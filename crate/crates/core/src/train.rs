//! Two-stage training and the variational baseline.
//!
//! Stage 1 trains `phi`, `g` and the critic `c` as a Wasserstein GAN with an
//! R1 penalty: `z ~ N(0, I)`, `y = phi^-1(z)`, `x = g(y)`. Stage 2 freezes
//! everything but the encoder and the critic, bypasses `phi`, and fits `f`
//! so that `g(f(x))` reconstructs `x`. The baseline replaces the encoder by
//! a variational one feeding `phi^-1`.

use std::path::Path;

use crate::data::csvlog::write_csv;
use crate::data::{Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::losses::{adv_loss, critic_loss, encoder_objective, kl_gaussian, recon_loss, LossWeights};
use crate::models::{pretrain_features, vae_encoder_forward, LiaModel, ModelDims, VaeEncoder};
use crate::nn::Mlp;
use crate::optim::Adam;
use crate::rng::{self, EpochSampler};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Number of consecutive non-finite baseline steps tolerated before giving up.
pub const MAX_NAN_STREAK: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub dataset: DatasetKind,
    /// Samples generated, including the held-out tail.
    pub dataset_size: usize,
    pub batch_size: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    pub lr_e: f32,
    pub weights: LossWeights,
    pub dims: ModelDims,
    /// Steps of feature-extractor pretraining; ignored with `random_features`.
    pub feature_steps: usize,
    /// Keep the feature extractor at its random initialization.
    pub random_features: bool,
    /// Gradient rows are written every `log_every` steps.
    pub log_every: usize,
    /// KL weight of the variational baseline.
    pub kl_weight: f32,
    /// Multiplier on the baseline's sampling noise; 0 makes it deterministic.
    pub vae_noise: f32,
}

impl TrainConfig {
    pub fn for_dataset(dataset: DatasetKind) -> Self {
        // Images need a critic that learns faster than the generator and a
        // slow encoder; at equal rates of 1e-3 the generator produces speckle
        // and the encoder collapses onto blank reconstructions.
        let (dims, stage1_steps, dataset_size, (lr_g, lr_d, lr_e)) = match dataset {
            DatasetKind::Shapes => (ModelDims::shapes(), 10_000, 10_000, (5e-5, 3e-4, 1e-4)),
            DatasetKind::Gaussians2d => (ModelDims::gaussians2d(), 3000, 20_000, (1e-3, 1e-3, 1e-3)),
        };
        let weights = LossWeights::default();
        Self {
            seed: 0,
            dataset,
            dataset_size,
            batch_size: 64,
            stage1_steps,
            stage2_steps: 5000,
            lr_g,
            lr_d,
            lr_e,
            weights,
            dims,
            feature_steps: 2000,
            random_features: false,
            log_every: 10,
            kl_weight: weights.beta2,
            vae_noise: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 || self.log_every == 0 || self.dataset_size < 10 {
            return bad("batch_size and log_every must be positive and dataset_size at least 10");
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("lr_e", self.lr_e)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        let w = self.weights;
        if [w.beta1, w.beta2, w.gamma, self.kl_weight, self.vae_noise]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("loss weights and noise scale must be finite and non-negative");
        }
        self.dims.validate()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let data = Dataset::generate(self.dataset, self.dataset_size, self.seed)?;
        if data.data_dim() != self.dims.data_dim {
            return Err(Error::Config(format!(
                "dataset has {} dimensions, model expects {}",
                data.data_dim(),
                self.dims.data_dim
            )));
        }
        Ok(data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub step: usize,
    pub layer: String,
    /// Mean absolute gradient over the layer's weight matrix.
    pub mean_abs_grad: f32,
    pub loss: f32,
}

/// Per-layer gradient magnitudes at logged steps, plus the loss at every step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradLog {
    pub rows: Vec<GradRow>,
    pub losses: Vec<f32>,
}

impl GradLog {
    /// Logged gradient magnitudes of one layer, in step order.
    pub fn series(&self, layer: &str) -> Vec<f32> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer)
            .map(|r| r.mean_abs_grad)
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(
            path,
            &["step", "layer", "mean_abs_grad", "loss"],
            self.rows.iter().map(|r| {
                vec![
                    r.step.to_string(),
                    r.layer.clone(),
                    r.mean_abs_grad.to_string(),
                    r.loss.to_string(),
                ]
            }),
        )
    }

    fn record(&mut self, step: usize, names: &[String], grads: &[Tensor], loss: f32) {
        // Weights only: names and grads alternate weight, bias.
        for (name, g) in names.iter().zip(grads).step_by(2) {
            let mean = g.data().iter().map(|v| v.abs()).sum::<f32>() / g.numel() as f32;
            self.rows.push(GradRow {
                step,
                layer: name.clone(),
                mean_abs_grad: mean,
                loss,
            });
        }
    }
}

/// Attach the step index to numeric failures.
fn at_step(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(source) => Error::Diverged { step, source },
        other => other,
    }
}

/// Fresh model with its feature extractor pretrained on `data` (unless the
/// configuration asks for random features).
pub fn init_model(config: &TrainConfig, data: &Dataset) -> Result<LiaModel> {
    config.validate()?;
    let mut model = LiaModel::init(config.dims, config.seed)?;
    if !config.random_features && config.feature_steps > 0 {
        pretrain_features(&mut model.eps, data, config.feature_steps, config.batch_size, config.seed)?;
    }
    Ok(model)
}

fn sample_batch(sampler: &mut EpochSampler, data: &Tensor, batch: usize) -> Tensor {
    data.select_rows(&sampler.next_batch(batch))
}

/// One critic update on `real` against detached `fake`; returns the loss.
fn critic_step(c: &mut Mlp, opt: &mut Adam, real: Tensor, fake: Tensor, gamma: f32, step: usize) -> Result<f32> {
    let mut tape = Tape::new();
    let bc = c.bind(&mut tape);
    let real = tape.leaf(real);
    let fake = tape.leaf(fake);
    let critic = |t: &mut Tape, v: Var| bc.forward(t, v);
    let loss = critic_loss(&mut tape, &critic, real, fake, gamma).map_err(|source| Error::Diverged { step, source })?;
    let value = tape.value(loss).item();
    let grads = tape
        .gradients(loss, &bc.vars())
        .map_err(|source| Error::Diverged { step, source })?;
    opt.step(c.params_mut(), &grads);
    Ok(value)
}

/// Stage 1 from a fresh model built by [`init_model`].
pub fn train_stage1(config: &TrainConfig, data: &Dataset) -> Result<(LiaModel, GradLog)> {
    let model = init_model(config, data)?;
    train_stage1_from(config, model, data)
}

/// Stage 1 starting from `model`: alternating critic and generator updates
/// over `{phi, g}` and `c`. The encoder and feature extractor are untouched.
pub fn train_stage1_from(config: &TrainConfig, mut model: LiaModel, data: &Dataset) -> Result<(LiaModel, GradLog)> {
    config.validate()?;
    let train = data.train().samples;
    let b = config.batch_size;
    let d = config.dims.latent_dim;
    let mut batches = EpochSampler::new(rng::stream(config.seed, 10), train.rows());
    let mut noise = rng::stream(config.seed, 11);
    let mut opt_c = Adam::new(config.lr_d);
    let mut opt_g = Adam::new(config.lr_g);
    let g_names = model.g.param_names("g");
    let mut log = GradLog::default();

    for step in 0..config.stage1_steps {
        let real = sample_batch(&mut batches, &train, b);
        let z = rng::gaussian_tensor(&mut noise, &[b, d]);
        let fake = model
            .generate(&model.z_to_y(&z)?)
            .map_err(at_step(step))?;
        critic_step(&mut model.c, &mut opt_c, real, fake, config.weights.gamma, step)?;

        let z = rng::gaussian_tensor(&mut noise, &[b, d]);
        let mut tape = Tape::new();
        let bphi = model.phi.bind(&mut tape);
        let bg = model.g.bind(&mut tape);
        let bc = model.c.bind(&mut tape);
        let zv = tape.leaf(z);
        let loss = (|| -> Result<Var> {
            let y = bphi.inverse(&mut tape, zv)?;
            let x = bg.forward(&mut tape, y)?;
            Ok(adv_loss(&mut tape, &|t: &mut Tape, v| bc.forward(t, v), x)?)
        })()
        .map_err(at_step(step))?;
        let value = tape.value(loss).item();
        let mut vars = bg.vars();
        vars.extend(bphi.vars());
        let grads = tape
            .gradients(loss, &vars)
            .map_err(|source| Error::Diverged { step, source })?;
        log.losses.push(value);
        if step % config.log_every == 0 {
            log.record(step, &g_names, &grads[..g_names.len()], value);
        }
        let mut params = model.g.params_mut();
        params.extend(model.phi.params_mut());
        opt_g.step(params, &grads);
    }
    Ok((model, log))
}

/// Stage 2: train the encoder against the frozen generator through
/// `x -> f -> g`, fine-tuning the critic at a tenth of its stage-1 rate.
pub fn train_stage2(config: &TrainConfig, mut model: LiaModel, data: &Dataset) -> Result<(LiaModel, GradLog)> {
    config.validate()?;
    let train = data.train().samples;
    let b = config.batch_size;
    let w = config.weights;
    let mut batches = EpochSampler::new(rng::stream(config.seed, 20), train.rows());
    let mut opt_c = Adam::new(config.lr_d / 10.0);
    let mut opt_f = Adam::new(config.lr_e);
    let f_names = model.f.param_names("f");
    let mut log = GradLog::default();

    for step in 0..config.stage2_steps {
        let real = sample_batch(&mut batches, &train, b);
        let rec = model.reconstruct(&real).map_err(at_step(step))?;
        critic_step(&mut model.c, &mut opt_c, real.clone(), rec, w.gamma, step)?;

        let mut tape = Tape::new();
        let bf = model.f.bind(&mut tape);
        let bg = model.g.bind(&mut tape);
        let bc = model.c.bind(&mut tape);
        let be = model.eps.bind(&mut tape);
        let x = tape.leaf(real);
        let loss = (|| -> Result<Var, TensorError> {
            let y = bf.forward(&mut tape, x)?;
            let x_rec = bg.forward(&mut tape, y)?;
            encoder_objective(
                &mut tape,
                x,
                x_rec,
                |t: &mut Tape, v| be.forward(t, v),
                &|t: &mut Tape, v| bc.forward(t, v),
                w.beta1,
                w.beta2,
            )
        })()
        .map_err(|source| Error::Diverged { step, source })?;
        let value = tape.value(loss).item();
        let grads = tape
            .gradients(loss, &bf.vars())
            .map_err(|source| Error::Diverged { step, source })?;
        log.losses.push(value);
        if step % config.log_every == 0 {
            log.record(step, &f_names, &grads, value);
        }
        opt_f.step(model.f.params_mut(), &grads);
    }
    Ok((model, log))
}

/// Variational baseline: `x -> (mu, logvar) -> z -> phi^-1 -> g`, trained on
/// `beta2 * recon + kl_weight * KL` with `g` and `phi` frozen. Non-finite
/// steps are logged as NaN and skipped; [`MAX_NAN_STREAK`] in a row abort.
pub fn train_vae_baseline(config: &TrainConfig, model: &LiaModel, data: &Dataset) -> Result<(VaeEncoder, GradLog)> {
    config.validate()?;
    let train = data.train().samples;
    let b = config.batch_size;
    let d = config.dims.latent_dim;
    let w = config.weights;
    let mut vae = VaeEncoder::init(&config.dims, config.seed);
    let mut batches = EpochSampler::new(rng::stream(config.seed, 20), train.rows());
    let mut noise = rng::stream(config.seed, 21);
    let mut opt = Adam::new(config.lr_e);
    let names = vae.net.param_names("vae");
    let mut log = GradLog::default();
    let mut streak = 0;

    for step in 0..config.stage2_steps {
        let real = sample_batch(&mut batches, &train, b);
        let eps_noise = rng::gaussian_tensor(&mut noise, &[b, d]).map(|v| v * config.vae_noise);
        let mut tape = Tape::new();
        let bv = vae.net.bind(&mut tape);
        let bphi = model.phi.bind(&mut tape);
        let bg = model.g.bind(&mut tape);
        let be = model.eps.bind(&mut tape);
        let x = tape.leaf(real);
        let n = tape.leaf(eps_noise);
        let outcome = (|| -> Result<(f32, Vec<Tensor>)> {
            let (mu, logvar, z) = vae_encoder_forward(&mut tape, &bv, d, x, n)?;
            let y = bphi.inverse(&mut tape, z)?;
            let x_rec = bg.forward(&mut tape, y)?;
            let rec = recon_loss(&mut tape, x, x_rec, |t: &mut Tape, v| be.forward(t, v), w.beta1)?;
            let rec = tape.scale(rec, w.beta2)?;
            let loss = if config.kl_weight > 0.0 {
                let kl = kl_gaussian(&mut tape, mu, logvar)?;
                let kl = tape.scale(kl, config.kl_weight)?;
                tape.add(rec, kl)?
            } else {
                rec
            };
            let value = tape.value(loss).item();
            let grads = tape.gradients(loss, &bv.vars())?;
            Ok((value, grads))
        })();
        match outcome {
            Ok((value, grads)) => {
                streak = 0;
                log.losses.push(value);
                if step % config.log_every == 0 {
                    log.record(step, &names, &grads, value);
                }
                opt.step(vae.net.params_mut(), &grads);
            }
            Err(Error::Tensor(source @ TensorError::NonFinite { .. })) => {
                streak += 1;
                log.losses.push(f32::NAN);
                if step % config.log_every == 0 {
                    for name in names.iter().step_by(2) {
                        log.rows.push(GradRow {
                            step,
                            layer: name.clone(),
                            mean_abs_grad: f32::NAN,
                            loss: f32::NAN,
                        });
                    }
                }
                if streak >= MAX_NAN_STREAK {
                    return Err(Error::Diverged { step, source });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((vae, log))
}

/// Gradient-log name of an MLP's first weight matrix.
pub fn first_layer_name(prefix: &str) -> String {
    format!("{prefix}.0.weight")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig::for_dataset(DatasetKind::Gaussians2d);
        c.dataset_size = 200;
        c.batch_size = 16;
        c.stage1_steps = 5;
        c.stage2_steps = 5;
        c.feature_steps = 5;
        c.dims.hidden = 16;
        c.log_every = 1;
        c
    }

    #[test]
    fn zero_steps_leave_model_at_init() {
        let mut c = tiny_config();
        c.stage1_steps = 0;
        let data = c.dataset().unwrap();
        let init = init_model(&c, &data).unwrap();
        let (m, log) = train_stage1(&c, &data).unwrap();
        assert_eq!(m, init);
        assert!(log.rows.is_empty());
        c.stage2_steps = 0;
        let (m2, _) = train_stage2(&c, m.clone(), &data).unwrap();
        assert_eq!(m2, m);
    }

    #[test]
    fn stage1_is_deterministic_and_leaves_encoder() {
        let c = tiny_config();
        let data = c.dataset().unwrap();
        let (a, la) = train_stage1(&c, &data).unwrap();
        let (b, lb) = train_stage1(&c, &data).unwrap();
        assert_eq!(a.to_checkpoint(), b.to_checkpoint());
        assert_eq!(la, lb);
        let init = init_model(&c, &data).unwrap();
        assert_eq!(a.f, init.f);
        assert_eq!(a.eps, init.eps);
        assert_ne!(a.g, init.g);
        assert_ne!(a.c, init.c);
    }

    #[test]
    fn stage2_freezes_generator_and_coupling() {
        let c = tiny_config();
        let data = c.dataset().unwrap();
        let (m, _) = train_stage1(&c, &data).unwrap();
        let (m2, log) = train_stage2(&c, m.clone(), &data).unwrap();
        assert_eq!(m2.g, m.g);
        assert_eq!(m2.phi, m.phi);
        assert_eq!(m2.eps, m.eps);
        assert_ne!(m2.f, m.f);
        assert_eq!(log.losses.len(), c.stage2_steps);
    }

    #[test]
    fn grad_log_schema() {
        let mut c = tiny_config();
        c.log_every = 2;
        let data = c.dataset().unwrap();
        let (m, _) = train_stage1(&c, &data).unwrap();
        let (_, log) = train_vae_baseline(&c, &m, &data).unwrap();
        let layers = c.dims.depth + 1;
        let logged_steps = c.stage2_steps.div_ceil(c.log_every);
        assert_eq!(log.rows.len(), layers * logged_steps);
        for (i, chunk) in log.rows.chunks(layers).enumerate() {
            assert!(chunk.iter().all(|r| r.step == i * c.log_every));
            let names: Vec<_> = chunk.iter().map(|r| r.layer.as_str()).collect();
            assert_eq!(names, ["vae.0.weight", "vae.1.weight", "vae.2.weight"]);
        }
        assert_eq!(log.series(&first_layer_name("vae")).len(), logged_steps);
    }

    #[test]
    fn deterministic_baseline_matches_direct_recon() {
        let mut c = tiny_config();
        c.kl_weight = 0.0;
        c.vae_noise = 0.0;
        c.stage2_steps = 1;
        let data = c.dataset().unwrap();
        let (m, _) = train_stage1(&c, &data).unwrap();
        let (_, log) = train_vae_baseline(&c, &m, &data).unwrap();

        // Replay the first batch by hand: z = mu, no KL.
        let vae = VaeEncoder::init(&c.dims, c.seed);
        let train = data.train().samples;
        let real = sample_batch(&mut EpochSampler::new(rng::stream(c.seed, 20), train.rows()), &train, c.batch_size);
        let out = vae.net.eval(&real).unwrap();
        let mu = Tensor::from_rows(
            &(0..out.rows())
                .map(|i| out.row_slice(i)[..c.dims.latent_dim].to_vec())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let rec = m.generate(&m.z_to_y(&mu).unwrap()).unwrap();
        let mut t = Tape::new();
        let be = m.eps.bind(&mut t);
        let (x, r) = (t.leaf(real), t.leaf(rec));
        let want = recon_loss(&mut t, x, r, |t: &mut Tape, v| be.forward(t, v), c.weights.beta1).unwrap();
        let want = t.value(want).item() * c.weights.beta2;
        assert!((log.losses[0] - want).abs() <= 1e-5 * want.abs().max(1.0), "{} vs {want}", log.losses[0]);
    }

    #[test]
    fn divergence_reports_step() {
        let mut c = tiny_config();
        c.lr_g = 1e30;
        c.lr_d = 1e30;
        c.stage1_steps = 50;
        let data = c.dataset().unwrap();
        match train_stage1(&c, &data) {
            Err(Error::Diverged { step, .. }) => assert!(step < 50),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.lr_e = 0.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.dims.data_dim = 3;
        assert!(c.dataset().is_err());
    }
}
