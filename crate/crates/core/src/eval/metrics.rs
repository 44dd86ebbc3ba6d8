use crate::data::Image;
use crate::error::{Error, Result};

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Fraction of samples whose predicted string equals the ground truth
/// exactly; a single wrong or missing character fails the sample. An empty
/// list scores 0.
pub fn full_lpr_accuracy<P: AsRef<str>, G: AsRef<str>>(predictions: &[P], truths: &[G]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p.as_ref() == t.as_ref())
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Peak signal-to-noise ratio in dB for images with range 1, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let dims = |im: &Image| (im.channels(), im.height(), im.width());
    if dims(a) != dims(b) {
        return Err(Error::shape(format!(
            "psnr of {:?} and {:?} images",
            dims(a),
            dims(b)
        )));
    }
    let n = a.data().len().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}
