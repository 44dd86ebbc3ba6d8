//! License plate recovery networks that jointly denoise and rectify a
//! low-quality plate image, trained with auxiliary segmentation and
//! character-counting heads, plus the synthetic data, training loop and
//! recognition-based evaluation around them.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod parallel;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
