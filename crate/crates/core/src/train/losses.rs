use crate::autodiff::{weighted_total, Var};
use crate::data::{Image, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::{Mode, Pass, SniderModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights of the denoising, rectification, segmentation and counting terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_gd: f64,
    pub lambda_gr: f64,
    pub lambda_ds: f64,
    pub lambda_dc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_gd: 0.4,
            lambda_gr: 0.4,
            lambda_ds: 0.15,
            lambda_dc: 0.05,
        }
    }
}

/// Which loss terms a training stage optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub gd: bool,
    pub gr: bool,
    pub ds: bool,
    pub dc: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        gd: true,
        gr: true,
        ds: true,
        dc: true,
    };

    pub fn as_array(self) -> [bool; 4] {
        [self.gd, self.gr, self.ds, self.dc]
    }
}

impl LossWeights {
    pub fn new(lambda_gd: f64, lambda_gr: f64, lambda_ds: f64, lambda_dc: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_gd,
            lambda_gr,
            lambda_ds,
            lambda_dc,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda_gd, self.lambda_gr, self.lambda_ds, self.lambda_dc]
    }

    /// Weights with inactive terms set to zero.
    pub fn masked(&self, terms: Terms) -> LossWeights {
        let [a, b, c, d] = self.as_array();
        let [ta, tb, tc, td] = terms.as_array();
        let m = |w: f64, on: bool| if on { w } else { 0.0 };
        LossWeights {
            lambda_gd: m(a, ta),
            lambda_gr: m(b, tb),
            lambda_ds: m(c, tc),
            lambda_dc: m(d, td),
        }
    }
}

/// The four loss values and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_gd: f64,
    pub l_gr: f64,
    pub l_ds: f64,
    pub l_dc: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `total` is accumulated left to right: gd, gr, ds, dc.
    pub fn from_components(components: [f64; 4], weights: &LossWeights) -> Self {
        let w = weights.as_array();
        let pairs: Vec<(f64, f64)> = components.iter().copied().zip(w).collect();
        LossBreakdown {
            l_gd: components[0],
            l_gr: components[1],
            l_ds: components[2],
            l_dc: components[3],
            total: weighted_total(&pairs),
        }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.l_gd, self.l_gr, self.l_ds, self.l_dc]
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite()) && self.total.is_finite()
    }
}

/// A training batch as tensors: inputs, the three targets and the counts.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub lq: Tensor<T>,
    pub hq: Tensor<T>,
    pub hq0: Tensor<T>,
    pub seg: Tensor<T>,
    /// `[B, 1]`.
    pub count: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&TrainingSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let pick = |f: fn(&TrainingSample) -> &Image| -> Result<Tensor<T>> {
            Image::batch(&samples.iter().map(|s| f(s)).collect::<Vec<_>>())
        };
        Ok(Batch {
            lq: pick(|s| &s.i_lq)?,
            hq: pick(|s| &s.i_hq)?,
            hq0: pick(|s| &s.i_hq_0)?,
            seg: pick(|s| &s.i_seg)?,
            count: Tensor::new(
                [samples.len(), 1],
                samples.iter().map(|s| T::from_usize(s.count)).collect(),
            )?,
        })
    }

    pub fn len(&self) -> usize {
        self.lq.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss nodes recorded on a pass. Terms that were not evaluated are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub terms: [Option<Var>; 4],
    pub total: Var,
}

impl LossGraph {
    pub fn breakdown<T: Scalar>(&self, pass: &Pass<T>, weights: &LossWeights) -> Result<LossBreakdown> {
        let mut c = [0.0; 4];
        for (slot, term) in c.iter_mut().zip(&self.terms) {
            if let Some(v) = term {
                *slot = pass.tape.value(*v).item()?.as_f64();
            }
        }
        Ok(LossBreakdown::from_components(c, weights))
    }
}

/// Records the losses on `pass`. With `all_terms` false, terms with zero
/// weight are skipped along with the sub-networks only they need.
pub fn build_losses<T: Scalar>(
    model: &SniderModel<T>,
    pass: &mut Pass<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    all_terms: bool,
) -> Result<LossGraph> {
    weights.validate()?;
    let [wgd, wgr, wds, wdc] = weights.as_array();
    let on = |w: f64| all_terms || w != 0.0;
    let need_aux = on(wds) || on(wdc);
    let need_main = on(wgr) || need_aux;
    let x = pass.tape.input(batch.lq.clone());
    let mut terms = [None; 4];
    if need_main {
        let out = model.forward_main(pass, x)?;
        if on(wgd) {
            terms[0] = Some(pass.tape.mse_loss(out.denoised, &batch.hq)?);
        }
        if on(wgr) {
            terms[1] = Some(pass.tape.l1_loss(out.rectified, &batch.hq0)?);
        }
        if need_aux {
            let aux = model.forward_aux(pass, &out.fused)?;
            if on(wds) {
                terms[2] = Some(pass.tape.bce_loss(aux.segment, &batch.seg)?);
            }
            if on(wdc) {
                terms[3] = Some(pass.tape.mse_loss(aux.count, &batch.count)?);
            }
        }
    } else if on(wgd) {
        let denoised = model.forward_denoiser(pass, x)?;
        terms[0] = Some(pass.tape.mse_loss(denoised, &batch.hq)?);
    }
    let weighted: Vec<(Var, T)> = terms
        .iter()
        .zip([wgd, wgr, wds, wdc])
        .filter_map(|(t, w)| t.map(|v| (v, T::from_f64(w))))
        .collect();
    let total = if weighted.is_empty() {
        pass.tape.input(Tensor::scalar(T::zero()))
    } else {
        pass.tape.weighted_sum(&weighted)?
    };
    Ok(LossGraph { terms, total })
}

/// All four losses of a train-mode forward pass over `batch` and their
/// weighted total. The model is not modified.
pub fn compute_losses<T: Scalar>(
    model: &SniderModel<T>,
    batch: &[&TrainingSample],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let batch = Batch::from_samples(batch)?;
    let mut pass = Pass::new(Mode::Train);
    let graph = build_losses(model, &mut pass, &batch, weights, true)?;
    graph.breakdown(&pass, weights)
}
