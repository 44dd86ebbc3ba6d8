use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Manifest, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::{build_snider, SniderModel};
use crate::train::checkpoint::{load_checkpoint_expecting, save_checkpoint_file};
use crate::train::losses::{Batch, LossBreakdown};
use crate::train::schedule::{StageSchedule, TrainConfig};
use crate::train::step::train_step;

pub const METRICS_HEADER: &str = "iter,stage,lr,l_gd,l_gr,l_ds,l_dc,total,grad_norm";

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub stage: String,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub grad_norm: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iter, self.stage, self.lr, l.l_gd, l.l_gr, l.l_ds, l.l_dc, l.total, self.grad_norm
        )
    }
}

/// A model being trained on an in-memory sample set. Batch composition
/// depends only on the seed and the iteration, so a run restored from a
/// checkpoint continues exactly as the uninterrupted run would.
pub struct Trainer {
    config: TrainConfig,
    schedule: StageSchedule,
    samples: Vec<TrainingSample>,
    model: SniderModel<f32>,
    iteration: u64,
}

fn sample_size(samples: &[TrainingSample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    let size = first.i_lq.height();
    for s in samples {
        for im in [&s.i_lq, &s.i_hq, &s.i_hq_0] {
            if (im.channels(), im.height(), im.width()) != (3, size, size) {
                return Err(Error::shape(format!("every image must be 3x{size}x{size}")));
            }
        }
        if (s.i_seg.channels(), s.i_seg.height(), s.i_seg.width()) != (1, size, size) {
            return Err(Error::shape(format!("every mask must be 1x{size}x{size}")));
        }
    }
    Ok(size)
}

impl Trainer {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: TrainConfig, samples: Vec<TrainingSample>) -> Result<Self> {
        config.validate()?;
        let size = sample_size(&samples)?;
        let model = build_snider(config.variant, size, config.seed)?;
        Trainer::resume(config, samples, model, 0)
    }

    /// Continues from a model that has completed `iteration` steps.
    pub fn resume(
        config: TrainConfig,
        samples: Vec<TrainingSample>,
        model: SniderModel<f32>,
        iteration: u64,
    ) -> Result<Self> {
        config.validate()?;
        let size = sample_size(&samples)?;
        if model.kind() != config.variant {
            return Err(Error::VariantMismatch {
                expected: config.variant.to_string(),
                found: model.kind().to_string(),
            });
        }
        if model.input_size() != size {
            return Err(Error::shape(format!(
                "model expects {} px inputs but samples are {size} px",
                model.input_size()
            )));
        }
        if iteration > config.max_iterations {
            return Err(Error::invalid(format!(
                "checkpoint is at iteration {iteration}, past max_iterations {}",
                config.max_iterations
            )));
        }
        Ok(Trainer {
            schedule: config.schedule()?,
            config,
            samples,
            model,
            iteration,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &SniderModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> SniderModel<f32> {
        self.model
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.max_iterations
    }

    /// Sample indices of the batch used at `iteration`: each epoch is a
    /// seeded permutation cut into consecutive batches.
    pub fn batch_indices(&self, iteration: u64) -> Vec<usize> {
        let n = self.samples.len();
        let per_epoch = self.config.iterations_per_epoch(n);
        let (epoch, k) = (iteration / per_epoch, (iteration % per_epoch) as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let b = self.config.batch_size.min(n);
        perm[k * b..(k + 1) * b].to_vec()
    }

    pub fn step(&mut self) -> Result<MetricsRow> {
        let it = self.iteration;
        let stage = self
            .schedule
            .stage_at(it)
            .ok_or_else(|| Error::invalid(format!("iteration {it} is past the end of the schedule")))?;
        let stage_name = stage.name.clone();
        let weights = self.config.weights.masked(stage.terms);
        let lr = self.config.lr_at(it, self.samples.len());
        let idx = self.batch_indices(it);
        let refs: Vec<&TrainingSample> = idx.iter().map(|&i| &self.samples[i]).collect();
        let batch = Batch::from_samples(&refs)?;
        let out = train_step(&mut self.model, &batch, &weights, lr, self.config.clip_norm, it)?;
        self.iteration += 1;
        Ok(MetricsRow {
            iter: it,
            stage: stage_name,
            lr,
            losses: out.losses,
            grad_norm: out.grad_norm,
        })
    }
}

/// Where and how often a run writes its outputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainRun {
    pub out_dir: PathBuf,
    /// Save `ckpt_NNNNNNN.sndr` every this many iterations (0 disables).
    pub checkpoint_every: u64,
    pub resume: Option<PathBuf>,
    /// Stop once this many iterations are complete, as if interrupted.
    pub stop_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub iterations: u64,
    pub last: Option<MetricsRow>,
}

pub const FINAL_CHECKPOINT: &str = "final.sndr";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:07}.sndr")
}

/// Metrics rows before `start` from an existing log, header included.
fn kept_metrics(path: &Path, start: u64) -> Result<String> {
    let mut out = format!("{METRICS_HEADER}\n");
    if start == 0 || !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines().skip(1) {
        let iter: u64 = line
            .split(',')
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                message: format!("bad metrics row `{line}`"),
            })?;
        if iter < start {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Loads the manifest, trains, and writes `metrics.csv`, periodic
/// checkpoints and `final.sndr` into `run.out_dir`. `progress` sees every
/// metrics row as it is produced.
pub fn train(
    config: &TrainConfig,
    manifest: &Path,
    run: &TrainRun,
    progress: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainSummary> {
    config.validate()?;
    let samples = Manifest::load(manifest)?.load_samples()?;
    let mut trainer = match &run.resume {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let (model, it) = load_checkpoint_expecting(&bytes, config.variant)?;
            Trainer::resume(config.clone(), samples, model, it)?
        }
        None => Trainer::new(config.clone(), samples)?,
    };
    fs::create_dir_all(&run.out_dir).map_err(|e| Error::io(&run.out_dir, e))?;
    let metrics = run.out_dir.join(METRICS_FILE);
    let mut log = kept_metrics(&metrics, trainer.iteration())?;
    let end = run
        .stop_at
        .map_or(config.max_iterations, |s| s.min(config.max_iterations));
    let mut last = None;
    let write_log = |log: &str| fs::write(&metrics, log).map_err(|e| Error::io(&metrics, e));
    while trainer.iteration() < end {
        let row = match trainer.step() {
            Ok(row) => row,
            Err(e) => {
                write_log(&log)?;
                return Err(e);
            }
        };
        log.push_str(&row.to_csv());
        log.push('\n');
        progress(&row);
        last = Some(row);
        let it = trainer.iteration();
        if run.checkpoint_every > 0 && it % run.checkpoint_every == 0 {
            write_log(&log)?;
            save_checkpoint_file(&run.out_dir.join(checkpoint_name(it)), trainer.model(), it)?;
        }
    }
    write_log(&log)?;
    let it = trainer.iteration();
    let final_checkpoint = if it >= config.max_iterations {
        run.out_dir.join(FINAL_CHECKPOINT)
    } else {
        run.out_dir.join(checkpoint_name(it))
    };
    save_checkpoint_file(&final_checkpoint, trainer.model(), it)?;
    Ok(TrainSummary {
        final_checkpoint,
        metrics,
        iterations: it,
        last,
    })
}
