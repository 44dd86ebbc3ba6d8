use crate::error::{Error, Result};
use crate::nn::VariantKind;
use crate::train::losses::{LossWeights, Terms};

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: String,
    /// First iteration of the stage.
    pub start: u64,
    /// One past the last iteration.
    pub end: u64,
    pub terms: Terms,
}

/// Consecutive stages covering `[0, max_iterations)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSchedule {
    stages: Vec<Stage>,
}

pub const STAGE_NAMES: [&str; 3] = ["denoise", "rectify", "joint"];

impl StageSchedule {
    pub fn new(stages: Vec<Stage>, max_iterations: u64) -> Result<Self> {
        let mut at = 0;
        for s in &stages {
            if s.start != at || s.end < s.start {
                return Err(Error::invalid(format!(
                    "stage `{}` spans [{}, {}) but must start at {at}",
                    s.name, s.start, s.end
                )));
            }
            at = s.end;
        }
        if at != max_iterations {
            return Err(Error::invalid(format!(
                "stages end at {at} but training runs {max_iterations} iterations"
            )));
        }
        Ok(StageSchedule { stages })
    }

    /// Denoising only, then denoising and rectification, then every term.
    /// `fractions` are the shares of the first two stages; the last stage
    /// takes the rest.
    pub fn staged(max_iterations: u64, fractions: [f64; 2]) -> Result<Self> {
        let [a, b] = fractions;
        if !(a >= 0.0 && b >= 0.0 && a + b <= 1.0) {
            return Err(Error::invalid(format!(
                "stage fractions {fractions:?} must be non-negative and sum to at most 1"
            )));
        }
        let n = max_iterations as f64;
        let e1 = (n * a).round() as u64;
        let e2 = ((n * (a + b)).round() as u64).max(e1).min(max_iterations);
        let terms = [
            Terms {
                gd: true,
                gr: false,
                ds: false,
                dc: false,
            },
            Terms {
                gd: true,
                gr: true,
                ds: false,
                dc: false,
            },
            Terms::ALL,
        ];
        let bounds = [(0, e1), (e1, e2), (e2, max_iterations)];
        let stages = STAGE_NAMES
            .iter()
            .zip(bounds)
            .zip(terms)
            .map(|((name, (start, end)), terms)| Stage {
                name: name.to_string(),
                start,
                end,
                terms,
            })
            .collect();
        StageSchedule::new(stages, max_iterations)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage_at(&self, iteration: u64) -> Option<&Stage> {
        self.stages
            .iter()
            .find(|s| s.start <= iteration && iteration < s.end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: VariantKind,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Epoch (pass over the training set) at which the rate drops.
    pub lr_switch_epoch: u64,
    /// Overrides `lr_switch_epoch` with an absolute iteration.
    pub lr_switch_iteration: Option<u64>,
    pub max_iterations: u64,
    pub clip_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Shares of the first two stages; see [`StageSchedule::staged`].
    pub stage_fractions: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: VariantKind::SniderTiny,
            batch_size: 16,
            lr_initial: 1e-4,
            lr_final: 1e-5,
            lr_switch_epoch: 100,
            lr_switch_iteration: None,
            max_iterations: 1000,
            clip_norm: 5.0,
            seed: 0,
            weights: LossWeights::default(),
            stage_fractions: [0.2, 0.3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr_initial.is_finite() && self.lr_final >= 0.0 && self.lr_final <= self.lr_initial) {
            return Err(Error::invalid(format!(
                "need 0 <= lr_final <= lr_initial, got {} and {}",
                self.lr_final, self.lr_initial
            )));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::invalid(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<StageSchedule> {
        StageSchedule::staged(self.max_iterations, self.stage_fractions)
    }

    /// Iterations per epoch for a training set of `n` samples; a trailing
    /// partial batch is dropped.
    pub fn iterations_per_epoch(&self, n: usize) -> u64 {
        (n / self.batch_size.min(n).max(1)).max(1) as u64
    }

    pub fn lr_switch_at(&self, n: usize) -> u64 {
        self.lr_switch_iteration
            .unwrap_or_else(|| self.lr_switch_epoch.saturating_mul(self.iterations_per_epoch(n)))
    }

    pub fn lr_at(&self, iteration: u64, n: usize) -> f64 {
        if iteration < self.lr_switch_at(n) {
            self.lr_initial
        } else {
            self.lr_final
        }
    }
}
