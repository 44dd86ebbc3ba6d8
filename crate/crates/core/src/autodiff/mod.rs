//! Minimal dense-tensor autodiff: the layers, losses and optimizer the
//! recovery networks need, and nothing else.

pub mod kernels;
pub mod optim;
pub mod param;
pub mod tape;

pub use kernels::ConvSpec;
pub use optim::{adam_step, clip_gradients, grad_norm, AdamConfig};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{backward, weighted_total, BatchStats, Gradients, Tape, Var, BATCH_NORM_EPS, BCE_CLAMP};
