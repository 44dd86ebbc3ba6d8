//! The recovery networks: layer descriptors for both architectures and the
//! model that wires the denoiser, rectifier and auxiliary heads together.

mod model;
mod spec;

pub use model::{
    build_snider, AuxOutputs, Fused, MainOutputs, Mode, Pass, RunningStats, SniderModel, INIT_STD,
    LEAKY_SLOPE, NORM_MOMENTUM,
};
pub use spec::{Layer, NetworkVariant, VariantKind, IMAGE_CHANNELS};
