use crate::autodiff::{adam_step, clip_gradients, AdamConfig};
use crate::error::{Error, Result};
use crate::nn::{Mode, Pass, SniderModel};
use crate::scalar::Scalar;
use crate::train::losses::{build_losses, Batch, LossBreakdown, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Losses before the update. Terms with zero weight are not evaluated
    /// and read 0.
    pub losses: LossBreakdown,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One optimization step: forward, backward on the weighted total, gradient
/// clipping, Adam, batch-norm running statistics. A non-finite loss or
/// gradient aborts before any parameter or statistic changes.
pub fn train_step<T: Scalar>(
    model: &mut SniderModel<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    lr: f64,
    clip_norm: f64,
    iteration: u64,
) -> Result<StepOutcome> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be non-negative, got {lr}"
        )));
    }
    if clip_norm.is_nan() || clip_norm <= 0.0 {
        return Err(Error::invalid(format!(
            "clip norm must be positive, got {clip_norm}"
        )));
    }
    let mut pass = Pass::new(Mode::Train);
    let graph = build_losses(model, &mut pass, batch, weights, false)?;
    let losses = graph.breakdown(&pass, weights)?;
    let tape_total = pass.tape.value(graph.total).item()?.as_f64();
    if !losses.is_finite() || !tape_total.is_finite() {
        return Err(Error::NonFinite {
            iteration,
            detail: format!(
                "l_gd={} l_gr={} l_ds={} l_dc={} total={}",
                losses.l_gd, losses.l_gr, losses.l_ds, losses.l_dc, losses.total
            ),
        });
    }
    let grads = pass.tape.backward(graph.total)?;
    let store = model.params_mut();
    store.zero_grads();
    grads.accumulate_into(&pass.tape, store)?;
    let params = store.as_mut_slice();
    let norm = crate::autodiff::grad_norm(params);
    if !norm.is_finite() {
        store.zero_grads();
        return Err(Error::NonFinite {
            iteration,
            detail: format!("gradient norm {norm}"),
        });
    }
    clip_gradients(params, clip_norm)?;
    adam_step(params, lr, AdamConfig::default())?;
    store.zero_grads();
    model.commit_norm_updates(&pass.into_updates());
    Ok(StepOutcome {
        losses,
        grad_norm: norm,
    })
}
