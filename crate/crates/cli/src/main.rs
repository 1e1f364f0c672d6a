//! `lia`: data generation, two-stage training, the variational baseline,
//! inversion, interpolation and metrics from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error, 3 checkpoint file missing, 4 checkpoint unreadable.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use lia_core::data::checkpoint::{load_checkpoint, save_checkpoint};
use lia_core::data::csvlog::{write_csv, write_loss_curve};
use lia_core::data::pgm::{read_pgm, write_image};
use lia_core::data::{Dataset, SHAPE_SIDE};
use lia_core::inversion::{initial_code, invert_y, invert_z, InitMode, InversionOptions};
use lia_core::metrics::{self, MetricReport, PathMode, Space};
use lia_core::models::LiaModel;
use lia_core::train::{train_stage1, train_stage2, train_vae_baseline};
use lia_core::{rng, Tensor};

#[derive(Parser)]
#[command(name = "lia", version, about = "Latently invertible autoencoder at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to a timestamped directory under `runs/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the step count of the command (training steps, inversion
    /// steps, or interpolation frames).
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write its factors and preview images.
    GenData {
        #[command(flatten)]
        common: Common,
        /// `shapes` or `gaussians2d`.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Adversarial training of the coupling network, generator and critic.
    TrainStage1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Encoder training against the frozen generator.
    TrainStage2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Variational encoder baseline through the frozen coupling network.
    VaeBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Optimize a latent code to reconstruct one image.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "encoder")]
        init: String,
        #[arg(long, default_value = "y")]
        space: String,
        /// Held-out sample to reconstruct.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// PGM image to reconstruct instead of a held-out sample.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Render frames along a latent path between two encoded samples.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "y")]
        space: String,
        /// Held-out index of the first endpoint.
        #[arg(long, default_value_t = 0)]
        from: usize,
        /// Held-out index of the second endpoint.
        #[arg(long, default_value_t = 1)]
        to: usize,
    },
    /// Evaluate a trained checkpoint.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

enum Failure {
    Usage(String),
    MissingCheckpoint(PathBuf),
    BadCheckpoint(PathBuf, String),
    Runtime(lia_core::Error),
}

impl From<lia_core::Error> for Failure {
    fn from(e: lia_core::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<lia_core::tensor::TensorError> for Failure {
    fn from(e: lia_core::tensor::TensorError) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::MissingCheckpoint(p)) => {
            eprintln!("error: checkpoint {} not found", p.display());
            ExitCode::from(3)
        }
        Err(Failure::BadCheckpoint(p, m)) => {
            eprintln!("error: checkpoint {}: {m}", p.display());
            ExitCode::from(4)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Resolved configuration plus the run directory it was written to.
struct Run {
    cfg: RunConfig,
    dir: PathBuf,
}

impl Run {
    /// Read the config, apply flag overrides, create the run directory and
    /// store the resolved config in it.
    fn start(name: &str, common: &Common, dataset: Option<&str>, steps_key: &str) -> Outcome<Self> {
        let mut text = match &common.config {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        if let Some(d) = dataset {
            text.push_str(&format!("\ndataset = {d}\n"));
        }
        if let Some(s) = common.seed {
            text.push_str(&format!("\nseed = {s}\n"));
        }
        if let Some(n) = common.steps {
            text.push_str(&format!("\n{steps_key} = {n}\n"));
        }
        let cfg = RunConfig::parse(&text).map_err(|e| Failure::Usage(e.to_string()))?;
        let dir = match &common.out {
            Some(d) => d.clone(),
            None => PathBuf::from("runs").join(format!("{name}-{}", chrono::Local::now().format("%Y%m%d-%H%M%S"))),
        };
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.txt"), cfg.render())?;
        Ok(Self { cfg, dir })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn dataset(&self) -> Outcome<Dataset> {
        Ok(self.cfg.train.dataset()?)
    }

    /// Load a model and adopt its dimensions.
    fn load_model(&mut self, path: &Path) -> Outcome<LiaModel> {
        if !path.exists() {
            return Err(Failure::MissingCheckpoint(path.to_path_buf()));
        }
        let ck = load_checkpoint(path).map_err(|e| Failure::BadCheckpoint(path.to_path_buf(), e.to_string()))?;
        let model = LiaModel::from_checkpoint(&ck).map_err(|e| Failure::BadCheckpoint(path.to_path_buf(), e.to_string()))?;
        self.cfg.train.dims = model.dims;
        fs::write(self.path("config.txt"), self.cfg.render())?;
        Ok(model)
    }

    fn save_model(&self, file: &str, model: &LiaModel) -> Outcome {
        save_checkpoint(self.path(file), &model.to_checkpoint()).map_err(lia_core::Error::from)?;
        Ok(())
    }
}

fn is_image(dim: usize) -> bool {
    dim == SHAPE_SIDE * SHAPE_SIDE
}

fn write_sample(path: &Path, row: &[f32]) -> Outcome {
    write_image(path, SHAPE_SIDE, SHAPE_SIDE, row)?;
    Ok(())
}

fn rows_csv(path: &Path, t: &Tensor) -> Outcome {
    let header: Vec<String> = (0..t.cols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header,
        (0..t.rows()).map(|i| t.row_slice(i).iter().map(|v| v.to_string()).collect()),
    )?;
    Ok(())
}

fn run(command: Command) -> Outcome {
    match command {
        Command::GenData { common, dataset } => gen_data(&common, dataset.as_deref()),
        Command::TrainStage1 { common, dataset } => {
            let run = Run::start("stage1", &common, dataset.as_deref(), "stage1_steps")?;
            let data = run.dataset()?;
            let (model, log) = train_stage1(&run.cfg.train, &data)?;
            run.save_model("stage1.lia", &model)?;
            log.write_csv(run.path("stage1_grads.csv"))?;
            write_loss_curve(run.path("stage1_loss.csv"), &log.losses)?;
            println!("{}", run.path("stage1.lia").display());
            Ok(())
        }
        Command::TrainStage2 { common, checkpoint } => {
            let mut run = Run::start("stage2", &common, None, "stage2_steps")?;
            let model = run.load_model(&checkpoint)?;
            let data = run.dataset()?;
            let (model, log) = train_stage2(&run.cfg.train, model, &data)?;
            run.save_model("stage2.lia", &model)?;
            log.write_csv(run.path("stage2_grads.csv"))?;
            write_loss_curve(run.path("stage2_loss.csv"), &log.losses)?;
            println!("{}", run.path("stage2.lia").display());
            Ok(())
        }
        Command::VaeBaseline { common, checkpoint } => {
            let mut run = Run::start("vae", &common, None, "stage2_steps")?;
            let model = run.load_model(&checkpoint)?;
            let data = run.dataset()?;
            let (vae, log) = train_vae_baseline(&run.cfg.train, &model, &data)?;
            save_checkpoint(run.path("vae.lia"), &vae.to_checkpoint()).map_err(lia_core::Error::from)?;
            log.write_csv(run.path("vae_grads.csv"))?;
            write_loss_curve(run.path("vae_loss.csv"), &log.losses)?;
            println!("{}", run.path("vae.lia").display());
            Ok(())
        }
        Command::Invert {
            common,
            checkpoint,
            init,
            space,
            index,
            target,
        } => invert(&common, &checkpoint, &init, &space, index, target.as_deref()),
        Command::Interpolate {
            common,
            checkpoint,
            space,
            from,
            to,
        } => interpolate(&common, &checkpoint, &space, from, to),
        Command::Metrics { common, checkpoint } => evaluate(&common, &checkpoint),
    }
}

fn gen_data(common: &Common, dataset: Option<&str>) -> Outcome {
    let run = Run::start("data", common, dataset, "dataset_size")?;
    let data = run.dataset()?;
    rows_csv(&run.path("factors.csv"), &data.factors)?;
    if is_image(data.data_dim()) {
        let dir = run.path("images");
        fs::create_dir_all(&dir)?;
        for i in 0..run.cfg.eval.preview.min(data.len()) {
            write_sample(&dir.join(format!("sample_{i:04}.pgm")), data.samples.row_slice(i))?;
        }
    } else {
        rows_csv(&run.path("samples.csv"), &data.samples)?;
    }
    println!("{}", run.dir.display());
    Ok(())
}

fn parse_flag<T: std::str::FromStr<Err = lia_core::Error>>(value: &str) -> Outcome<T> {
    value.parse().map_err(|e: lia_core::Error| Failure::Usage(e.to_string()))
}

fn held_out_row(data: &Dataset, index: usize) -> Outcome<Tensor> {
    let held = data.held_out().samples;
    if index >= held.rows() {
        return Err(Failure::Usage(format!(
            "index {index} out of range for {} held-out samples",
            held.rows()
        )));
    }
    Ok(held.rows_range(index, index + 1))
}

fn invert(common: &Common, checkpoint: &Path, init: &str, space: &str, index: usize, target: Option<&Path>) -> Outcome {
    let init: InitMode = parse_flag(init)?;
    let space: Space = parse_flag(space)?;
    let mut run = Run::start("invert", common, None, "invert_steps")?;
    let model = run.load_model(checkpoint)?;
    let x = match target {
        Some(p) => {
            let bytes = fs::read(p)?;
            let (w, h, px) = read_pgm(&bytes).ok_or_else(|| Failure::Usage(format!("{} is not a binary PGM", p.display())))?;
            if w * h != model.dims.data_dim {
                return Err(Failure::Usage(format!("{w}x{h} image does not match the model")));
            }
            Tensor::new([1, w * h], px.iter().map(|&b| b as f32 / 127.5 - 1.0).collect())?
        }
        None => held_out_row(&run.dataset()?, index)?,
    };
    let opts = InversionOptions {
        steps: run.cfg.eval.invert_steps,
        lr: run.cfg.eval.invert_lr,
        seed: run.cfg.train.seed,
        beta1: run.cfg.train.weights.beta1,
        ..Default::default()
    };
    let result = match space {
        Space::Y => invert_y(&model, &x, init, &opts)?,
        Space::Z => invert_z(&model, &x, &initial_code(&model, &x, init, &opts)?, &opts)?,
    };
    write_loss_curve(run.path("loss.csv"), &result.loss_curve)?;
    rows_csv(&run.path("latent.csv"), &result.latent)?;
    let y = match space {
        Space::Y => result.latent.clone(),
        Space::Z => model.z_to_y(&result.latent)?,
    };
    let rec = model.generate(&y)?;
    if is_image(model.dims.data_dim) {
        write_sample(&run.path("target.pgm"), x.data())?;
        write_sample(&run.path("reconstruction.pgm"), rec.data())?;
    }
    println!("initial loss {} final loss {}", result.loss_curve[0], result.final_loss());
    Ok(())
}

fn interpolate(common: &Common, checkpoint: &Path, space: &str, from: usize, to: usize) -> Outcome {
    let space: Space = parse_flag(space)?;
    let mut run = Run::start("interpolate", common, None, "frames")?;
    let model = run.load_model(checkpoint)?;
    let data = run.dataset()?;
    let frames = run.cfg.eval.frames;
    if frames < 2 {
        return Err(Failure::Usage("interpolation needs at least 2 frames".into()));
    }
    let yi = model.encode(&held_out_row(&data, from)?)?;
    let yj = model.encode(&held_out_row(&data, to)?)?;
    let codes = metrics::path_codes(&model, space, yi.data(), yj.data(), frames)?;
    let out = model.generate(&codes)?;
    if is_image(model.dims.data_dim) {
        for k in 0..frames {
            write_sample(&run.path(&format!("frame_{k:03}.pgm")), out.row_slice(k))?;
        }
    } else {
        rows_csv(&run.path("frames.csv"), &out)?;
    }
    // Undefined for fewer than three frames or coincident endpoints.
    let straightness = match metrics::path_straightness(&model, space, yi.data(), yj.data(), frames) {
        Ok(v) => v.to_string(),
        Err(_) => String::new(),
    };
    write_csv(
        run.path("straightness.csv"),
        &["space", "frames", "straightness"],
        [vec![space.to_string(), frames.to_string(), straightness]],
    )?;
    println!("{}", run.dir.display());
    Ok(())
}

fn evaluate(common: &Common, checkpoint: &Path) -> Outcome {
    let mut run = Run::start("metrics", common, None, "metric_samples")?;
    let model = run.load_model(checkpoint)?;
    let data = run.dataset()?;
    let e = run.cfg.eval.clone();
    let seed = run.cfg.train.seed;
    let threads = metrics::thread_count();
    let d = model.dims.latent_dim;
    let held = data.held_out().samples;
    let n = held.rows();

    let mut reports = Vec::new();
    let rec = model.reconstruct(&held)?;
    reports.push(MetricReport::new("recon_mse", metrics::mse(&held, &rec)?, n, seed)?);
    let z = rng::gaussian_tensor(&mut rng::stream(seed, 50), &[n, d]);
    let generated = model.generate(&model.z_to_y(&z)?)?;
    reports.push(MetricReport::new(
        "swd",
        metrics::swd(&generated, &held, e.swd_projections, seed, threads)?,
        n,
        seed,
    )?);
    if n > model.feat_dim() {
        reports.push(MetricReport::new("ffd", metrics::ffd(&model, &generated, &held)?, n, seed)?);
    }
    for space in [Space::Y, Space::Z] {
        for mode in [PathMode::Full, PathMode::End] {
            let v = metrics::path_length(&model, space, mode, e.metric_samples, e.path_step, seed, threads)?;
            reports.push(
                MetricReport::new("path_length", v, e.metric_samples, seed)?
                    .in_space(space)
                    .with_mode(mode),
            );
        }
        let lip = metrics::lipschitz_ratio_stats(&model, space, e.metric_samples, seed, threads)?;
        reports.push(MetricReport::new("lipschitz_mean", lip.mean, e.metric_samples, seed)?.in_space(space));
        reports.push(MetricReport::new("lipschitz_p95", lip.p95, e.metric_samples, seed)?.in_space(space));
    }
    let ends = model.z_to_y(&rng::gaussian_tensor(
        &mut rng::stream(seed, 51),
        &[2 * e.straightness_pairs, d],
    ))?;
    for space in [Space::Y, Space::Z] {
        let mut total = 0.0;
        for p in 0..e.straightness_pairs {
            total += metrics::path_straightness(
                &model,
                space,
                ends.row_slice(2 * p),
                ends.row_slice(2 * p + 1),
                e.straightness_steps,
            )?;
        }
        let mean = total / e.straightness_pairs as f64;
        reports.push(MetricReport::new("path_straightness", mean, e.straightness_pairs, seed)?.in_space(space));
    }
    let probes = 10;
    let mut iso = 0.0;
    for p in 0..probes {
        iso += metrics::model_isometry_probe(&model, ends.row_slice(p % ends.rows()), 1e-2)?;
    }
    reports.push(MetricReport::new("isometry_deviation", iso / probes as f64, probes, seed)?);

    metrics::write_reports(run.path("metrics.csv"), &reports)?;
    for r in &reports {
        let tag = |o: Option<String>| o.unwrap_or_else(|| "-".into());
        println!(
            "{:<20} {:>2} {:>4} {:.6}",
            r.name,
            tag(r.space.map(|s| s.to_string())),
            tag(r.mode.map(|m| m.to_string())),
            r.value
        );
    }
    Ok(())
}
