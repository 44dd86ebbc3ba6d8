//! Finite-difference check of every parameter gradient of the weighted
//! training loss on a small seeded model.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::backward;
use crate::error::Result;
use crate::nn::{build_snider, Mode, Pass, SniderModel, VariantKind};
use crate::tensor::Tensor;
use crate::train::{build_losses, Batch, LossWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub variant: VariantKind,
    pub size: usize,
    pub batch: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    /// Entries checked per parameter tensor; smaller tensors are checked in
    /// full.
    pub per_tensor: usize,
    pub tolerance: f64,
    /// Denominator floor of the relative error, for gradients that vanish.
    pub floor: f64,
    pub weights: LossWeights,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            variant: VariantKind::SniderTiny,
            size: 8,
            batch: 2,
            seed: 0,
            step: 1e-5,
            per_tensor: 16,
            tolerance: 1e-3,
            floor: 1e-8,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Largest analytic gradient magnitude among the checked entries.
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Random inputs and targets: images in `[0, 1]`, binary masks, counts in
/// 1..=8.
pub fn random_batch(size: usize, batch: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = |c: usize| Tensor::from_fn([batch, c, size, size], |_| rng.random::<f64>());
    let (lq, hq, hq0) = (image(3), image(3), image(3));
    let seg = Tensor::from_fn([batch, 1, size, size], |_| f64::from(rng.random::<bool>()));
    let count = Tensor::from_fn([batch, 1], |_| rng.random_range(1..=8) as f64);
    Batch {
        lq,
        hq,
        hq0,
        seg,
        count,
    }
}

fn total_loss(model: &SniderModel<f64>, batch: &Batch<f64>, weights: &LossWeights) -> Result<f64> {
    let mut pass = Pass::new(Mode::Train);
    let graph = build_losses(model, &mut pass, batch, weights, true)?;
    pass.tape.value(graph.total).item()
}

/// Compares backpropagated gradients of the weighted total loss (train-mode
/// batch norm, 64-bit) with central differences.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut model = build_snider::<f64>(cfg.variant, cfg.size, cfg.seed)?;
    let batch = random_batch(cfg.size, cfg.batch, cfg.seed ^ 0x5eed);
    let mut pass = Pass::new(Mode::Train);
    let graph = build_losses(&model, &mut pass, &batch, &cfg.weights, true)?;
    model.params_mut().zero_grads();
    backward(&pass.tape, graph.total, model.params_mut())?;
    drop(pass);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xfd);
    let mut params = Vec::new();
    for pi in 0..model.params().len() {
        let p = &model.params().as_slice()[pi];
        let name = p.name.clone();
        let grad = p.grad.clone().unwrap_or_else(|| vec![0.0; p.len()]);
        let idx: Vec<usize> = if p.len() <= cfg.per_tensor {
            (0..p.len()).collect()
        } else {
            let mut v = sample(&mut rng, p.len(), cfg.per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let mut max_rel_err = 0.0f64;
        let mut max_abs_grad = 0.0f64;
        for &i in &idx {
            let orig = model.params().as_slice()[pi].value.data()[i];
            let mut eval_at = |v: f64| -> Result<f64> {
                model.params_mut().as_mut_slice()[pi].value.data_mut()[i] = v;
                total_loss(&model, &batch, &cfg.weights)
            };
            let plus = eval_at(orig + cfg.step)?;
            let minus = eval_at(orig - cfg.step)?;
            model.params_mut().as_mut_slice()[pi].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            max_rel_err = max_rel_err.max(relative_error(grad[i], numeric, cfg.floor));
            max_abs_grad = max_abs_grad.max(grad[i].abs());
        }
        params.push(ParamCheck {
            name,
            checked: idx.len(),
            max_rel_err,
            max_abs_grad,
        });
    }
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        params,
        max_rel_err,
        tolerance: cfg.tolerance,
    })
}
