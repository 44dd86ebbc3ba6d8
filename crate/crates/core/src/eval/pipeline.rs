use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{GlyphSet, Image, Manifest, TrainingSample};
use crate::error::{Error, Result};
use crate::eval::metrics::{full_lpr_accuracy, psnr};
use crate::eval::recognize::recognize;
use crate::nn::SniderModel;
use crate::parallel::map_indexed;
use crate::scalar::Scalar;

/// Maps a degraded plate to a recovered one.
pub trait Recoverer: Sync {
    fn recover(&self, lq: &Image) -> Result<Image>;
}

/// Denoiser followed by rectifier, in eval mode.
pub struct FullRecoverer<'a, T: Scalar>(pub &'a SniderModel<T>);

/// Denoiser alone, in eval mode.
pub struct DenoiseRecoverer<'a, T: Scalar>(pub &'a SniderModel<T>);

/// Returns its input unchanged.
pub struct IdentityRecoverer;

// Outputs are quantized so that in-memory results match what a PPM round
// trip would give.
impl<T: Scalar> Recoverer for FullRecoverer<'_, T> {
    fn recover(&self, lq: &Image) -> Result<Image> {
        Ok(Image::from_tensor(&self.0.recover(&lq.to_tensor())?, 0)?.quantized())
    }
}

impl<T: Scalar> Recoverer for DenoiseRecoverer<'_, T> {
    fn recover(&self, lq: &Image) -> Result<Image> {
        Ok(Image::from_tensor(&self.0.denoise(&lq.to_tensor())?, 0)?.quantized())
    }
}

impl Recoverer for IdentityRecoverer {
    fn recover(&self, lq: &Image) -> Result<Image> {
        Ok(lq.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub angle: i32,
    pub truth: String,
    pub pred_lq: String,
    pub pred_rec: String,
    pub psnr_lq: f64,
    pub psnr_rec: f64,
}

impl EvalRow {
    pub fn ok_lq(&self) -> bool {
        self.pred_lq == self.truth
    }

    pub fn ok_rec(&self) -> bool {
        self.pred_rec == self.truth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub accuracy_lq: f64,
    pub accuracy_recovered: f64,
    pub mean_psnr_lq: f64,
    pub mean_psnr_recovered: f64,
    pub rows: Vec<EvalRow>,
}

pub const EVAL_HEADER: &str = "id,angle,truth,pred_lq,pred_rec,psnr_lq,psnr_rec,ok_lq,ok_rec";

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        let truths: Vec<&str> = rows.iter().map(|r| r.truth.as_str()).collect();
        let lq: Vec<&str> = rows.iter().map(|r| r.pred_lq.as_str()).collect();
        let rec: Vec<&str> = rows.iter().map(|r| r.pred_rec.as_str()).collect();
        let mean = |f: fn(&EvalRow) -> f64| {
            if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / rows.len() as f64
            }
        };
        Ok(EvalReport {
            n_samples: rows.len(),
            accuracy_lq: full_lpr_accuracy(&lq, &truths)?,
            accuracy_recovered: full_lpr_accuracy(&rec, &truths)?,
            mean_psnr_lq: mean(|r| r.psnr_lq),
            mean_psnr_recovered: mean(|r| r.psnr_rec),
            rows,
        })
    }

    /// Per-sample CSV followed by `#`-prefixed summary lines.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.4},{:.4},{},{}",
                r.id,
                r.angle,
                r.truth,
                r.pred_lq,
                r.pred_rec,
                r.psnr_lq,
                r.psnr_rec,
                r.ok_lq() as u8,
                r.ok_rec() as u8
            );
        }
        let _ = writeln!(out, "# n_samples {}", self.n_samples);
        let _ = writeln!(out, "# accuracy_lq {:.6}", self.accuracy_lq);
        let _ = writeln!(out, "# accuracy_recovered {:.6}", self.accuracy_recovered);
        let _ = writeln!(out, "# mean_psnr_lq {:.4}", self.mean_psnr_lq);
        let _ = writeln!(out, "# mean_psnr_recovered {:.4}", self.mean_psnr_recovered);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Recognizes every raw and recovered degraded plate. Rows keep the order of
/// `samples`; PSNRs are measured against the upright clean plate.
pub fn evaluate_samples(
    recoverer: &dyn Recoverer,
    samples: &[(String, TrainingSample)],
    glyphs: &GlyphSet,
) -> Result<EvalReport> {
    let rows = map_indexed(samples.len(), |i| -> Result<EvalRow> {
        let (id, s) = &samples[i];
        let rec = recoverer.recover(&s.i_lq)?;
        Ok(EvalRow {
            id: id.clone(),
            angle: s.angle,
            truth: s.digits.clone(),
            pred_lq: recognize(&s.i_lq, glyphs).predicted,
            pred_rec: recognize(&rec, glyphs).predicted,
            psnr_lq: psnr(&s.i_lq, &s.i_hq_0)?,
            psnr_rec: psnr(&rec, &s.i_hq_0)?,
        })
    });
    EvalReport::from_rows(rows.into_iter().collect::<Result<_>>()?)
}

/// Loads a manifest and evaluates every record in it.
pub fn evaluate_pipeline(
    recoverer: &dyn Recoverer,
    manifest: &Path,
    glyphs: &GlyphSet,
) -> Result<EvalReport> {
    let m = Manifest::load(manifest)?;
    let ids: Vec<String> = m.records.iter().map(|r| r.id.clone()).collect();
    let samples = m.load_samples()?;
    evaluate_samples(
        recoverer,
        &ids.into_iter().zip(samples).collect::<Vec<_>>(),
        glyphs,
    )
}
