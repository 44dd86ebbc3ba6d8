//! Run configuration: defaults, overridden by a `key = value` file, overridden
//! by command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use snider_core::data::DatasetConfig;
use snider_core::gradcheck::GradcheckConfig;
use snider_core::nn::VariantKind;
use snider_core::train::{LossWeights, TrainConfig};

/// Which recovery the `recover` and `eval` commands apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Denoiser followed by rectifier.
    Snider,
    /// Denoiser alone.
    Denoise,
    /// No recovery; needs no checkpoint.
    Identity,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "snider" => Ok(ModelKind::Snider),
            "denoise" => Ok(ModelKind::Denoise),
            "identity" => Ok(ModelKind::Identity),
            _ => Err(format!(
                "unknown model `{s}` (expected snider, denoise or identity)"
            )),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub threads: usize,
    pub seed: u64,

    pub plates: usize,
    pub size: usize,
    pub split: f64,
    pub noise: f32,
    pub decoration: bool,

    /// Unset means the library default for training and whatever the
    /// checkpoint holds for recovery.
    pub variant: Option<VariantKind>,
    pub batch: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub lr_switch_epoch: u64,
    pub lr_switch_iter: Option<u64>,
    pub iters: u64,
    pub clip: f64,
    pub lambda_gd: f64,
    pub lambda_gr: f64,
    pub lambda_ds: f64,
    pub lambda_dc: f64,
    pub stage_denoise: f64,
    pub stage_rectify: f64,
    pub checkpoint_every: u64,

    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub model: ModelKind,

    pub gradcheck_size: usize,
    pub gradcheck_batch: usize,
    pub gradcheck_step: f64,
    pub gradcheck_per_tensor: usize,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        let t = TrainConfig::default();
        let g = GradcheckConfig::default();
        RunConfig {
            threads: 1,
            seed: 0,
            plates: d.n_plates,
            size: d.size,
            split: d.split,
            noise: d.noise_sigma,
            decoration: d.decoration,
            variant: None,
            batch: t.batch_size,
            lr: t.lr_initial,
            lr_final: t.lr_final,
            lr_switch_epoch: t.lr_switch_epoch,
            lr_switch_iter: t.lr_switch_iteration,
            iters: t.max_iterations,
            clip: t.clip_norm,
            lambda_gd: t.weights.lambda_gd,
            lambda_gr: t.weights.lambda_gr,
            lambda_ds: t.weights.lambda_ds,
            lambda_dc: t.weights.lambda_dc,
            stage_denoise: t.stage_fractions[0],
            stage_rectify: t.stage_fractions[1],
            checkpoint_every: 0,
            out: None,
            manifest: None,
            checkpoint: None,
            resume: None,
            report: None,
            model: ModelKind::Snider,
            gradcheck_size: g.size,
            gradcheck_batch: g.batch,
            gradcheck_step: g.step,
            gradcheck_per_tensor: g.per_tensor,
            gradcheck_tolerance: g.tolerance,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError(format!(
            "bad value `{value}` for `{key}`: expected true or false"
        ))),
    }
}

impl RunConfig {
    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "threads" => self.threads = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "plates" => self.plates = parse(key, v)?,
            "size" => self.size = parse(key, v)?,
            "split" => self.split = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "decoration" => self.decoration = parse_bool(key, v)?,
            "variant" => self.variant = Some(parse(key, v)?),
            "batch" => self.batch = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lr_final" => self.lr_final = parse(key, v)?,
            "lr_switch_epoch" => self.lr_switch_epoch = parse(key, v)?,
            "lr_switch_iter" => self.lr_switch_iter = Some(parse(key, v)?),
            "iters" => self.iters = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "lambda_gd" => self.lambda_gd = parse(key, v)?,
            "lambda_gr" => self.lambda_gr = parse(key, v)?,
            "lambda_ds" => self.lambda_ds = parse(key, v)?,
            "lambda_dc" => self.lambda_dc = parse(key, v)?,
            "stage_denoise" => self.stage_denoise = parse(key, v)?,
            "stage_rectify" => self.stage_rectify = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "resume" => self.resume = Some(PathBuf::from(v)),
            "report" => self.report = Some(PathBuf::from(v)),
            "model" => self.model = parse(key, v)?,
            "gradcheck_size" => self.gradcheck_size = parse(key, v)?,
            "gradcheck_batch" => self.gradcheck_batch = parse(key, v)?,
            "gradcheck_step" => self.gradcheck_step = parse(key, v)?,
            "gradcheck_per_tensor" => self.gradcheck_per_tensor = parse(key, v)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = parse(key, v)?,
            _ => return Err(ConfigError(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and text after `#` are
    /// ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected `key = value`, got `{line}`", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| ConfigError(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            n_plates: self.plates,
            size: self.size,
            seed: self.seed,
            split: self.split,
            noise_sigma: self.noise,
            decoration: self.decoration,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant.unwrap_or(TrainConfig::default().variant),
            batch_size: self.batch,
            lr_initial: self.lr,
            lr_final: self.lr_final,
            lr_switch_epoch: self.lr_switch_epoch,
            lr_switch_iteration: self.lr_switch_iter,
            max_iterations: self.iters,
            clip_norm: self.clip,
            seed: self.seed,
            weights: LossWeights {
                lambda_gd: self.lambda_gd,
                lambda_gr: self.lambda_gr,
                lambda_ds: self.lambda_ds,
                lambda_dc: self.lambda_dc,
            },
            stage_fractions: [self.stage_denoise, self.stage_rectify],
        }
    }

    pub fn gradcheck(&self) -> GradcheckConfig {
        GradcheckConfig {
            variant: self.variant.unwrap_or(VariantKind::SniderTiny),
            size: self.gradcheck_size,
            batch: self.gradcheck_batch,
            seed: self.seed,
            step: self.gradcheck_step,
            per_tensor: self.gradcheck_per_tensor,
            tolerance: self.gradcheck_tolerance,
            weights: LossWeights {
                lambda_gd: self.lambda_gd,
                lambda_gr: self.lambda_gr,
                lambda_ds: self.lambda_ds,
                lambda_dc: self.lambda_dc,
            },
            ..GradcheckConfig::default()
        }
    }

    /// Checks that do not need any file access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.threads == 0 {
            return Err(ConfigError("threads must be at least 1".into()));
        }
        self.train().validate().map_err(|e| ConfigError(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_keeps_defaults() {
        let mut c = RunConfig::default();
        c.apply_text("\n# comment only\n   \n").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn keys_and_comments() {
        let mut c = RunConfig::default();
        c.apply_text("plates = 12 # trailing\nvariant=snider\nlr_switch_iter = 40\ndecoration = true\n")
            .unwrap();
        assert_eq!(c.plates, 12);
        assert_eq!(c.variant, Some(VariantKind::Snider));
        assert_eq!(c.lr_switch_iter, Some(40));
        assert!(c.decoration);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::default();
        let e = c.apply_text("plate = 3").unwrap_err();
        assert!(e.0.contains("unknown config key `plate`"), "{e}");
        assert!(c.apply_text("plates = many").unwrap_err().0.contains("line 1"));
        assert!(c.apply_text("no equals sign").is_err());
        assert!(c.apply_text("model = resnet").is_err());
    }

    #[test]
    fn defaults_agree_with_the_library() {
        let c = RunConfig::default();
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.dataset(), DatasetConfig::default());
        assert_eq!(c.gradcheck(), GradcheckConfig::default());
    }
}
