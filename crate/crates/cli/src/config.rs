//! `key = value` run configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use lia_core::data::DatasetKind;
use lia_core::train::TrainConfig;

/// Settings that are not part of training.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub invert_steps: usize,
    pub invert_lr: f32,
    pub frames: usize,
    pub metric_samples: usize,
    pub swd_projections: usize,
    pub path_step: f32,
    pub straightness_pairs: usize,
    pub straightness_steps: usize,
    pub preview: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            invert_steps: 200,
            invert_lr: 0.05,
            frames: 8,
            metric_samples: 1000,
            swd_projections: 64,
            path_step: 1e-2,
            straightness_pairs: 20,
            straightness_steps: 16,
            preview: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        message: message.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| err(key, format!("cannot parse {value:?}")))
}

/// `(key, value)` pairs in file order; blank lines and `#` comments skipped.
fn pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(err(line, format!("line {} is not `key = value`", n + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn for_dataset(dataset: DatasetKind) -> Self {
        Self {
            train: TrainConfig::for_dataset(dataset),
            eval: EvalConfig::default(),
        }
    }

    /// Parse a config file. `dataset` picks the defaults the other keys
    /// override, wherever it appears.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let pairs = pairs(text)?;
        let dataset = match pairs.iter().rev().find(|(k, _)| k == "dataset") {
            Some((k, v)) => v.parse::<DatasetKind>().map_err(|e| err(k, e.to_string()))?,
            None => DatasetKind::Shapes,
        };
        let mut cfg = Self::for_dataset(dataset);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.train
            .validate()
            .map_err(|e| err("(resolved)", e.to_string()))?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "dataset" => {}
            "seed" => t.seed = parse(key, value)?,
            "dataset_size" => t.dataset_size = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "stage1_steps" => t.stage1_steps = parse(key, value)?,
            "stage2_steps" => t.stage2_steps = parse(key, value)?,
            "lr_g" => t.lr_g = parse(key, value)?,
            "lr_d" => t.lr_d = parse(key, value)?,
            "lr_e" => t.lr_e = parse(key, value)?,
            "beta1" => t.weights.beta1 = parse(key, value)?,
            "beta2" => t.weights.beta2 = parse(key, value)?,
            "gamma" => t.weights.gamma = parse(key, value)?,
            "latent_dim" => t.dims.latent_dim = parse(key, value)?,
            "hidden" => t.dims.hidden = parse(key, value)?,
            "depth" => t.dims.depth = parse(key, value)?,
            "output_scale" => t.dims.output_scale = parse(key, value)?,
            "coupling_layers" => t.dims.coupling_layers = parse(key, value)?,
            "coupling_hidden" => t.dims.coupling_hidden = parse(key, value)?,
            "feature_steps" => t.feature_steps = parse(key, value)?,
            "random_features" => t.random_features = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "kl_weight" => t.kl_weight = parse(key, value)?,
            "vae_noise" => t.vae_noise = parse(key, value)?,
            "invert_steps" => e.invert_steps = parse(key, value)?,
            "invert_lr" => e.invert_lr = parse(key, value)?,
            "frames" => e.frames = parse(key, value)?,
            "metric_samples" => e.metric_samples = parse(key, value)?,
            "swd_projections" => e.swd_projections = parse(key, value)?,
            "path_step" => e.path_step = parse(key, value)?,
            "straightness_pairs" => e.straightness_pairs = parse(key, value)?,
            "straightness_steps" => e.straightness_steps = parse(key, value)?,
            "preview" => e.preview = parse(key, value)?,
            _ => return Err(err(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its resolved value; parses back to `self`.
    pub fn render(&self) -> String {
        let t = &self.train;
        let e = &self.eval;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dataset", t.dataset.to_string());
        put("seed", t.seed.to_string());
        put("dataset_size", t.dataset_size.to_string());
        put("batch_size", t.batch_size.to_string());
        put("stage1_steps", t.stage1_steps.to_string());
        put("stage2_steps", t.stage2_steps.to_string());
        put("lr_g", t.lr_g.to_string());
        put("lr_d", t.lr_d.to_string());
        put("lr_e", t.lr_e.to_string());
        put("beta1", t.weights.beta1.to_string());
        put("beta2", t.weights.beta2.to_string());
        put("gamma", t.weights.gamma.to_string());
        put("latent_dim", t.dims.latent_dim.to_string());
        put("hidden", t.dims.hidden.to_string());
        put("depth", t.dims.depth.to_string());
        put("output_scale", t.dims.output_scale.to_string());
        put("coupling_layers", t.dims.coupling_layers.to_string());
        put("coupling_hidden", t.dims.coupling_hidden.to_string());
        put("feature_steps", t.feature_steps.to_string());
        put("random_features", t.random_features.to_string());
        put("log_every", t.log_every.to_string());
        put("kl_weight", t.kl_weight.to_string());
        put("vae_noise", t.vae_noise.to_string());
        put("invert_steps", e.invert_steps.to_string());
        put("invert_lr", e.invert_lr.to_string());
        put("frames", e.frames.to_string());
        put("metric_samples", e.metric_samples.to_string());
        put("swd_projections", e.swd_projections.to_string());
        put("path_step", e.path_step.to_string());
        put("straightness_pairs", e.straightness_pairs.to_string());
        put("straightness_steps", e.straightness_steps.to_string());
        put("preview", e.preview.to_string());
        s
    }
}
