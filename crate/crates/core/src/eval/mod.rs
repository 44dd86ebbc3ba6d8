//! Character recognition, accuracy and image-quality metrics, and the
//! recover-then-recognize evaluation.

pub mod metrics;
pub mod pipeline;
pub mod recognize;

pub use metrics::{full_lpr_accuracy, psnr, psnr_from_mse, PSNR_CAP};
pub use pipeline::{
    evaluate_pipeline, evaluate_samples, DenoiseRecoverer, EvalReport, EvalRow, FullRecoverer,
    IdentityRecoverer, Recoverer, EVAL_HEADER,
};
pub use recognize::{recognize, CharMatch, RecognitionResult, MATCH_THRESHOLD, SUPPRESSION_WIDTHS};
