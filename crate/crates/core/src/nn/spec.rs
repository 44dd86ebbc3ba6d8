use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The two architectures: the five-level U-Net and the three-layer tiny
/// encoder-decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VariantKind {
    Snider,
    SniderTiny,
}

impl VariantKind {
    pub fn tag(self) -> u8 {
        match self {
            VariantKind::Snider => 0,
            VariantKind::SniderTiny => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(VariantKind::Snider),
            1 => Some(VariantKind::SniderTiny),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Snider => "snider",
            VariantKind::SniderTiny => "tiny",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snider" | "full" => Ok(VariantKind::Snider),
            "tiny" | "snider-tiny" | "snider_tiny" => Ok(VariantKind::SniderTiny),
            _ => Err(Error::invalid(format!(
                "unknown variant `{s}` (expected `snider` or `tiny`)"
            ))),
        }
    }
}

/// One layer descriptor. Convolutions use "same" padding, so a stride-`s`
/// conv divides the spatial size by `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv {
        kernel: usize,
        channels: usize,
        stride: usize,
    },
    /// 2x2 max pooling; the activation entering the pool is kept as a skip.
    MaxPool,
    /// Nearest 2x upsampling followed by concatenation of the skip at the
    /// new resolution.
    UpConcat,
    Deconv {
        kernel: usize,
        channels: usize,
        factor: usize,
    },
}

impl Layer {
    fn conv(kernel: usize, channels: usize) -> Self {
        Layer::Conv {
            kernel,
            channels,
            stride: 1,
        }
    }

    /// Spatial downsampling factor of this layer (upsampling layers give 1).
    fn reduction(self) -> usize {
        match self {
            Layer::Conv { stride, .. } => stride,
            Layer::MaxPool => 2,
            _ => 1,
        }
    }

    pub fn with_channels(self, c: usize) -> Self {
        match self {
            Layer::Conv { kernel, stride, .. } => Layer::Conv {
                kernel,
                channels: c,
                stride,
            },
            Layer::Deconv { kernel, factor, .. } => Layer::Deconv {
                kernel,
                channels: c,
                factor,
            },
            other => other,
        }
    }
}

/// Layer-by-layer description of an architecture. The same encoder is used by
/// both main networks, the same decoder by both main networks and the
/// segmentation head (with a one-channel output layer).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkVariant {
    pub kind: VariantKind,
    pub encoder: Vec<Layer>,
    /// Hidden decoder layers, each followed by batch norm and LeakyReLU.
    pub decoder: Vec<Layer>,
    /// Final image layer, followed only by a sigmoid.
    pub output: Layer,
    /// Output channels of the counting head: one global conv spanning the
    /// whole fused feature, then 1x1 convs, the last producing the count.
    pub counting: Vec<usize>,
}

pub const IMAGE_CHANNELS: usize = 3;

impl NetworkVariant {
    pub fn new(kind: VariantKind) -> Self {
        match kind {
            VariantKind::Snider => {
                let mut encoder = Vec::new();
                for (i, c) in [32, 64, 128, 256, 512].into_iter().enumerate() {
                    if i > 0 {
                        encoder.push(Layer::MaxPool);
                    }
                    encoder.extend([Layer::conv(3, c), Layer::conv(3, c)]);
                }
                let mut decoder = Vec::new();
                for c in [256, 128, 64, 32] {
                    decoder.extend([Layer::UpConcat, Layer::conv(3, c), Layer::conv(3, c)]);
                }
                NetworkVariant {
                    kind,
                    encoder,
                    decoder,
                    output: Layer::conv(1, IMAGE_CHANNELS),
                    counting: vec![512, 256, 128, 64, 1],
                }
            }
            VariantKind::SniderTiny => NetworkVariant {
                kind,
                encoder: vec![
                    Layer::Conv {
                        kernel: 7,
                        channels: 32,
                        stride: 2,
                    },
                    Layer::Conv {
                        kernel: 7,
                        channels: 64,
                        stride: 2,
                    },
                    Layer::conv(5, 128),
                ],
                decoder: vec![
                    Layer::conv(5, 64),
                    Layer::Deconv {
                        kernel: 7,
                        channels: 32,
                        factor: 2,
                    },
                ],
                output: Layer::Deconv {
                    kernel: 7,
                    channels: IMAGE_CHANNELS,
                    factor: 2,
                },
                counting: vec![128, 64, 1],
            },
        }
    }

    /// Input sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        self.encoder.iter().map(|l| l.reduction()).product()
    }

    pub fn fused_channels(&self) -> usize {
        self.encoder
            .iter()
            .rev()
            .find_map(|l| match *l {
                Layer::Conv { channels, .. } | Layer::Deconv { channels, .. } => Some(channels),
                _ => None,
            })
            .unwrap_or(IMAGE_CHANNELS)
    }

    pub fn check_input_size(&self, size: usize) -> Result<()> {
        let d = self.divisor();
        if size == 0 || !size.is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "input size {size} must be a positive multiple of {d} for {}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Spatial extent of the fused feature for a given input size.
    pub fn fused_size(&self, input_size: usize) -> usize {
        input_size / self.divisor()
    }

    /// Number of scalar weights of the whole model, derived from the layer
    /// descriptors alone.
    pub fn parameter_count(&self, input_size: usize) -> usize {
        let conv = |k: usize, ci: usize, co: usize| k * k * ci * co + co;
        let norm = |c: usize| 2 * c;
        let mut skips = Vec::new();
        let mut c = IMAGE_CHANNELS;
        let mut encoder = 0;
        for &l in &self.encoder {
            match l {
                Layer::Conv { kernel, channels, .. } | Layer::Deconv { kernel, channels, .. } => {
                    encoder += conv(kernel, c, channels) + norm(channels);
                    c = channels;
                }
                Layer::MaxPool => skips.push(c),
                Layer::UpConcat => {}
            }
        }
        let decoder = |out: usize| {
            let mut skips = skips.clone();
            let mut c = self.fused_channels();
            let mut total = 0;
            for &l in &self.decoder {
                match l {
                    Layer::Conv { kernel, channels, .. } | Layer::Deconv { kernel, channels, .. } => {
                        total += conv(kernel, c, channels) + norm(channels);
                        c = channels;
                    }
                    Layer::UpConcat => c += skips.pop().unwrap_or(0),
                    Layer::MaxPool => {}
                }
            }
            match self.output {
                Layer::Conv { kernel, .. } | Layer::Deconv { kernel, .. } => total + conv(kernel, c, out),
                _ => total,
            }
        };
        let n = self.fused_size(input_size);
        let mut counting = 0;
        let mut c = self.fused_channels();
        for (i, &co) in self.counting.iter().enumerate() {
            counting += conv(if i == 0 { n } else { 1 }, c, co);
            c = co;
        }
        2 * (encoder + decoder(IMAGE_CHANNELS)) + decoder(1) + counting
    }
}
