//! `snider`: dataset synthesis, training, recovery, evaluation and gradient
//! checks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use snider_core::data::{make_dataset, GlyphSet, Image, DEGRADE_FACTOR};
use snider_core::eval::{evaluate_pipeline, DenoiseRecoverer, FullRecoverer, IdentityRecoverer, Recoverer};
use snider_core::gradcheck::gradcheck;
use snider_core::nn::SniderModel;
use snider_core::train::{load_checkpoint_expecting, load_checkpoint_file, train, TrainRun};

use config::{ConfigError, ModelKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "snider", version, about = "License plate denoising and rectification")]
struct Cli {
    /// `key = value` file applied on top of the defaults; flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel kernels.
    #[arg(long, global = true, env = "SNIDER_THREADS")]
    threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic plate dataset with train and test manifests.
    Synth(SynthArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Recover degraded plate images, writing `<name>_rec.ppm` next to each.
    Recover(RecoverArgs),
    /// Recognize raw and recovered test plates and write a CSV report.
    Eval(EvalArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of plates; each yields four rotated samples.
    #[arg(long)]
    plates: Option<usize>,
    /// Image side in pixels; a multiple of 4, at least 32.
    #[arg(long)]
    size: Option<usize>,
    /// Fraction of plates in the training manifest.
    #[arg(long)]
    split: Option<f64>,
    /// Standard deviation of the Gaussian noise added to degraded images.
    #[arg(long)]
    noise: Option<f32>,
    /// Draw the plate border.
    #[arg(long)]
    decoration: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training manifest written by `synth`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory for metrics.csv and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `tiny` or `snider`.
    #[arg(long)]
    variant: Option<String>,
    /// Total iterations.
    #[arg(long)]
    iters: Option<u64>,
    /// Samples per iteration.
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate after the switch.
    #[arg(long)]
    lr_final: Option<f64>,
    /// Epoch at which the learning rate drops.
    #[arg(long)]
    lr_switch_epoch: Option<u64>,
    /// Iteration at which the learning rate drops; overrides the epoch.
    #[arg(long)]
    lr_switch_iter: Option<u64>,
    /// Global gradient norm limit.
    #[arg(long)]
    clip: Option<f64>,
    /// Weight of the denoising loss.
    #[arg(long)]
    lambda_gd: Option<f64>,
    /// Weight of the rectification loss.
    #[arg(long)]
    lambda_gr: Option<f64>,
    /// Weight of the segmentation loss.
    #[arg(long)]
    lambda_ds: Option<f64>,
    /// Weight of the counting loss.
    #[arg(long)]
    lambda_dc: Option<f64>,
    /// Share of iterations spent on denoising alone.
    #[arg(long)]
    stage_denoise: Option<f64>,
    /// Share of iterations spent on denoising and rectification.
    #[arg(long)]
    stage_rectify: Option<f64>,
    /// Write a checkpoint every this many iterations (0 disables).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    /// Trained model; not needed with `--model identity`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `snider`, `denoise` or `identity`.
    #[arg(long)]
    model: Option<String>,
    /// Fail unless the checkpoint holds this variant.
    #[arg(long)]
    variant: Option<String>,
    /// PPM images to recover.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Trained model; not needed with `--model identity`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Test manifest written by `synth`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// `snider`, `denoise` or `identity`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Input side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Samples in the random batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Central-difference step.
    #[arg(long)]
    step: Option<f64>,
    /// Entries sampled from each parameter tensor.
    #[arg(long)]
    per_tensor: Option<usize>,
    /// Largest accepted relative error.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    variant: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<snider_core::Error> for Failure {
    fn from(e: snider_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// Copies the flags that were given into `cfg`.
macro_rules! override_fields {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(if let Some(v) = &$args.$field {
            $cfg.$field = v.clone();
        })*
    };
}

macro_rules! override_options {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(if let Some(v) = &$args.$field {
            $cfg.$field = Some(v.clone());
        })*
    };
}

fn set_str(cfg: &mut RunConfig, key: &str, value: &Option<String>) -> Result<(), ConfigError> {
    match value {
        Some(v) => cfg.set(key, v),
        None => Ok(()),
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    override_fields!(cfg, cli; threads, seed);
    match &cli.command {
        Command::Synth(a) => {
            override_fields!(cfg, a; plates, size, split, noise, decoration);
            override_options!(cfg, a; out);
        }
        Command::Train(a) => {
            override_fields!(cfg, a; iters, batch, lr, lr_final, lr_switch_epoch, clip, lambda_gd,
                lambda_gr, lambda_ds, lambda_dc, stage_denoise, stage_rectify, checkpoint_every);
            override_options!(cfg, a; manifest, out, lr_switch_iter, resume);
            set_str(&mut cfg, "variant", &a.variant)?;
        }
        Command::Recover(a) => {
            override_options!(cfg, a; checkpoint);
            set_str(&mut cfg, "model", &a.model)?;
            set_str(&mut cfg, "variant", &a.variant)?;
        }
        Command::Eval(a) => {
            override_options!(cfg, a; checkpoint, manifest, report);
            set_str(&mut cfg, "model", &a.model)?;
            set_str(&mut cfg, "variant", &a.variant)?;
        }
        Command::Gradcheck(a) => {
            if let Some(v) = a.size {
                cfg.gradcheck_size = v;
            }
            if let Some(v) = a.batch {
                cfg.gradcheck_batch = v;
            }
            if let Some(v) = a.step {
                cfg.gradcheck_step = v;
            }
            if let Some(v) = a.per_tensor {
                cfg.gradcheck_per_tensor = v;
            }
            if let Some(v) = a.tolerance {
                cfg.gradcheck_tolerance = v;
            }
            set_str(&mut cfg, "variant", &a.variant)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Usage(format!("missing --{what} (or `{what}` in the config file)")))
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), Failure> {
    let out = required(&cfg.out, "out")?;
    if cfg.size < 32 || !cfg.size.is_multiple_of(DEGRADE_FACTOR) {
        return Err(Failure::Usage(format!(
            "--size {} must be a multiple of {DEGRADE_FACTOR} and at least 32",
            cfg.size
        )));
    }
    let summary = make_dataset(out, &cfg.dataset())?;
    println!(
        "wrote {} train and {} test samples to {}",
        summary.n_train,
        summary.n_test,
        out.display()
    );
    println!("train manifest: {}", summary.train_manifest.display());
    println!("test manifest: {}", summary.test_manifest.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<(), Failure> {
    let manifest = required(&cfg.manifest, "manifest")?;
    let out = required(&cfg.out, "out")?;
    let tc = cfg.train();
    let run = TrainRun {
        out_dir: out.to_path_buf(),
        checkpoint_every: cfg.checkpoint_every,
        resume: cfg.resume.clone(),
        stop_at: None,
    };
    let every = (tc.max_iterations / 20).max(1);
    let last = tc.max_iterations.saturating_sub(1);
    let summary = train(&tc, manifest, &run, &mut |row| {
        if row.iter % every == 0 || row.iter == last {
            let l = &row.losses;
            println!(
                "iter {:>7} {:<8} lr {:.1e} l_gd {:.5} l_gr {:.5} l_ds {:.5} l_dc {:.5} total {:.5}",
                row.iter, row.stage, row.lr, l.l_gd, l.l_gr, l.l_ds, l.l_dc, l.total
            );
        }
    })?;
    println!(
        "{} iterations; checkpoint {}; metrics {}",
        summary.iterations,
        summary.final_checkpoint.display(),
        summary.metrics.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<SniderModel<f32>, Failure> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    let (model, _) = match cfg.variant {
        Some(v) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            load_checkpoint_expecting(&bytes, v)?
        }
        None => load_checkpoint_file(path)?,
    };
    Ok(model)
}

/// Runs `f` with the recoverer selected by `cfg.model`.
fn with_recoverer<R>(cfg: &RunConfig, f: impl FnOnce(&dyn Recoverer) -> R) -> Result<R, Failure> {
    if cfg.model == ModelKind::Identity {
        return Ok(f(&IdentityRecoverer));
    }
    let model = load_model(cfg)?;
    Ok(match cfg.model {
        ModelKind::Denoise => f(&DenoiseRecoverer(&model)),
        _ => f(&FullRecoverer(&model)),
    })
}

fn recovered_path(input: &Path) -> PathBuf {
    let stem = input
        .file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy());
    input.with_file_name(format!("{stem}_rec.ppm"))
}

fn cmd_recover(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<(), Failure> {
    with_recoverer(cfg, |rec| -> anyhow::Result<()> {
        for input in inputs {
            let image = Image::load(input)?;
            let out = recovered_path(input);
            rec.recover(&image)
                .with_context(|| format!("recovering {}", input.display()))?
                .save(&out)?;
            println!("{} -> {}", input.display(), out.display());
        }
        Ok(())
    })??;
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<(), Failure> {
    let manifest = required(&cfg.manifest, "manifest")?;
    let report_path = required(&cfg.report, "report")?;
    let glyphs = GlyphSet::digits();
    let report = with_recoverer(cfg, |rec| evaluate_pipeline(rec, manifest, &glyphs))??;
    report.write(report_path)?;
    println!("samples {}", report.n_samples);
    println!(
        "accuracy lq {:.4} recovered {:.4}",
        report.accuracy_lq, report.accuracy_recovered
    );
    println!(
        "mean psnr lq {:.3} dB recovered {:.3} dB",
        report.mean_psnr_lq, report.mean_psnr_recovered
    );
    println!("report {}", report_path.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<(), Failure> {
    let gc = cfg.gradcheck();
    let report = gradcheck(&gc)?;
    let worst = report
        .params
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
    println!(
        "checked {} entries of {} tensors ({} at {}x{}, batch {})",
        report.entries_checked(),
        report.params.len(),
        gc.variant,
        gc.size,
        gc.size,
        gc.batch
    );
    if let Some(w) = worst {
        println!("worst tensor {} ({:.3e})", w.name, w.max_rel_err);
    }
    println!(
        "max relative error {:.3e} (tolerance {:.1e})",
        report.max_rel_err, report.tolerance
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("gradient check failed")))
    }
}

fn init_threads(n: usize) -> Result<(), Failure> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(anyhow!("cannot start {n} worker threads: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli)?;
    init_threads(cfg.threads)?;
    match &cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Recover(a) => cmd_recover(&cfg, &a.inputs),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
