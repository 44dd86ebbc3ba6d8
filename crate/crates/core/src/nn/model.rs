use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BatchStats, ConvSpec, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::spec::{Layer, NetworkVariant, VariantKind, IMAGE_CHANNELS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.01;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Weight of the previous running statistic in each update.
pub const NORM_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics normalize; running statistics are proposed as updates.
    Train,
    /// Running statistics normalize; nothing is updated.
    Eval,
}

/// Running mean and (unbiased) variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
enum Activation {
    Leaky,
    Sigmoid,
    Identity,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    slot: usize,
}

#[derive(Clone, Debug)]
enum Unit {
    Conv {
        weight: ParamId,
        bias: ParamId,
        spec: ConvSpec,
        norm: Option<Norm>,
        act: Activation,
    },
    Deconv {
        weight: ParamId,
        bias: ParamId,
        factor: usize,
        norm: Option<Norm>,
        act: Activation,
    },
    Pool,
    UpConcat,
}

#[derive(Clone, Debug)]
struct Net {
    encoder: Vec<Unit>,
    decoder: Vec<Unit>,
}

/// The two main networks (denoiser `g_d`, rectifier `g_r`) and the two
/// auxiliary heads (segmentation `d_s`, counting `d_c`).
#[derive(Clone, Debug)]
pub struct SniderModel<T: Scalar> {
    variant: NetworkVariant,
    input_size: usize,
    params: ParamStore<T>,
    running: Vec<RunningStats<T>>,
    g_d: Net,
    g_r: Net,
    d_s: Vec<Unit>,
    d_c: Vec<Unit>,
}

/// Encoder features of both main networks summed elementwise. `skips` holds
/// the summed skip features for U-Net decoders (empty for the tiny variant).
#[derive(Clone, Debug)]
pub struct Fused {
    pub feature: Var,
    pub skips: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct MainOutputs {
    pub denoised: Var,
    pub rectified: Var,
    pub denoiser_feature: Var,
    pub rectifier_feature: Var,
    pub fused: Fused,
}

#[derive(Clone, Copy, Debug)]
pub struct AuxOutputs {
    pub segment: Var,
    pub count: Var,
}

/// A tape plus the batch-norm mode and the running-statistic updates proposed
/// by train-mode passes. Updates are applied with
/// [`SniderModel::commit_norm_updates`], so an aborted step leaves the model
/// untouched.
pub struct Pass<T: Scalar> {
    pub tape: Tape<T>,
    mode: Mode,
    updates: Vec<(usize, BatchStats<T>)>,
}

impl<T: Scalar> Pass<T> {
    pub fn new(mode: Mode) -> Self {
        Pass {
            tape: Tape::new(),
            mode,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn into_updates(self) -> Vec<(usize, BatchStats<T>)> {
        self.updates
    }
}

struct Builder<'a, T: Scalar> {
    params: &'a mut ParamStore<T>,
    running: &'a mut Vec<RunningStats<T>>,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl<T: Scalar> Builder<'_, T> {
    fn weight(&mut self, name: String, shape: [usize; 4]) -> ParamId {
        let (rng, normal) = (&mut self.rng, &self.normal);
        let w = Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)));
        self.params.add(name, w)
    }

    fn norm(&mut self, prefix: &str, c: usize) -> Norm {
        let gamma = self
            .params
            .add(format!("{prefix}.bn.gamma"), Tensor::full([c], T::one()));
        let beta = self.params.add(format!("{prefix}.bn.beta"), Tensor::zeros([c]));
        self.running.push(RunningStats {
            name: format!("{prefix}.bn"),
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
        });
        Norm {
            gamma,
            beta,
            slot: self.running.len() - 1,
        }
    }

    /// Builds one weighted layer reading `ci` channels.
    fn layer(
        &mut self,
        prefix: &str,
        layer: Layer,
        ci: usize,
        normed: bool,
        act: Activation,
        valid: bool,
    ) -> Unit {
        match layer {
            Layer::Conv {
                kernel,
                channels,
                stride,
            } => {
                let weight = self.weight(format!("{prefix}.weight"), [channels, ci, kernel, kernel]);
                let bias = self
                    .params
                    .add(format!("{prefix}.bias"), Tensor::zeros([channels]));
                let norm = normed.then(|| self.norm(prefix, channels));
                let spec = if valid {
                    ConvSpec::symmetric(stride, 0)
                } else {
                    ConvSpec::same(kernel, stride)
                };
                Unit::Conv {
                    weight,
                    bias,
                    spec,
                    norm,
                    act,
                }
            }
            Layer::Deconv {
                kernel,
                channels,
                factor,
            } => {
                let weight = self.weight(format!("{prefix}.weight"), [ci, channels, kernel, kernel]);
                let bias = self
                    .params
                    .add(format!("{prefix}.bias"), Tensor::zeros([channels]));
                let norm = normed.then(|| self.norm(prefix, channels));
                Unit::Deconv {
                    weight,
                    bias,
                    factor,
                    norm,
                    act,
                }
            }
            Layer::MaxPool => Unit::Pool,
            Layer::UpConcat => Unit::UpConcat,
        }
    }

    /// Returns the units, the output channel count and the skip channel
    /// counts in push order.
    fn encoder(&mut self, prefix: &str, layers: &[Layer]) -> (Vec<Unit>, usize, Vec<usize>) {
        let mut c = IMAGE_CHANNELS;
        let mut skips = Vec::new();
        let mut units = Vec::new();
        for (i, &l) in layers.iter().enumerate() {
            if l == Layer::MaxPool {
                skips.push(c);
            }
            units.push(self.layer(&format!("{prefix}.enc.{i}"), l, c, true, Activation::Leaky, false));
            c = out_channels(l).unwrap_or(c);
        }
        (units, c, skips)
    }

    fn decoder(&mut self, prefix: &str, v: &NetworkVariant, mut skips: Vec<usize>, out: usize) -> Vec<Unit> {
        let mut c = v.fused_channels();
        let mut units = Vec::new();
        for (i, &l) in v.decoder.iter().enumerate() {
            if l == Layer::UpConcat {
                c += skips.pop().unwrap_or(0);
            }
            units.push(self.layer(&format!("{prefix}.dec.{i}"), l, c, true, Activation::Leaky, false));
            c = out_channels(l).unwrap_or(c);
        }
        let output = v.output.with_channels(out);
        units.push(self.layer(
            &format!("{prefix}.out"),
            output,
            c,
            false,
            Activation::Sigmoid,
            false,
        ));
        units
    }
}

fn out_channels(l: Layer) -> Option<usize> {
    match l {
        Layer::Conv { channels, .. } | Layer::Deconv { channels, .. } => Some(channels),
        _ => None,
    }
}

/// Builds a freshly initialized model: conv weights drawn from N(0, 0.01^2)
/// with a ChaCha8 stream seeded by `seed` in registration order, biases and
/// batch-norm shifts 0, batch-norm scales 1.
pub fn build_snider<T: Scalar>(kind: VariantKind, input_size: usize, seed: u64) -> Result<SniderModel<T>> {
    let variant = NetworkVariant::new(kind);
    variant.check_input_size(input_size)?;
    let mut params = ParamStore::new();
    let mut running = Vec::new();
    let mut b = Builder {
        params: &mut params,
        running: &mut running,
        rng: ChaCha8Rng::seed_from_u64(seed),
        normal: Normal::new(0.0, INIT_STD).expect("valid std"),
    };
    let mut skips = Vec::new();
    let mut net = |b: &mut Builder<T>, name: &str| {
        let (encoder, _, s) = b.encoder(name, &variant.encoder);
        let decoder = b.decoder(name, &variant, s.clone(), IMAGE_CHANNELS);
        skips = s;
        Net { encoder, decoder }
    };
    let g_d = net(&mut b, "g_d");
    let g_r = net(&mut b, "g_r");
    let d_s = b.decoder("d_s", &variant, skips, 1);
    let n = variant.fused_size(input_size);
    let mut c = variant.fused_channels();
    let mut d_c = Vec::new();
    let last = variant.counting.len() - 1;
    for (i, &co) in variant.counting.iter().enumerate() {
        let kernel = if i == 0 { n } else { 1 };
        let act = if i == last {
            Activation::Identity
        } else {
            Activation::Leaky
        };
        let layer = Layer::Conv {
            kernel,
            channels: co,
            stride: 1,
        };
        d_c.push(b.layer(&format!("d_c.{i}"), layer, c, false, act, true));
        c = co;
    }
    Ok(SniderModel {
        variant,
        input_size,
        params,
        running,
        g_d,
        g_r,
        d_s,
        d_c,
    })
}

struct Runner<'a, T: Scalar> {
    model: &'a SniderModel<T>,
    pass: &'a mut Pass<T>,
}

impl<T: Scalar> Runner<'_, T> {
    fn apply(&mut self, unit: &Unit, x: Var, skips: &mut Vec<Var>) -> Result<Var> {
        let params = &self.model.params;
        let tape = &mut self.pass.tape;
        let (y, norm, act) = match *unit {
            Unit::Conv {
                weight,
                bias,
                spec,
                norm,
                act,
            } => {
                let w = tape.param_from(params, weight);
                let b = tape.param_from(params, bias);
                (tape.conv2d_with(x, w, b, spec)?, norm, act)
            }
            Unit::Deconv {
                weight,
                bias,
                factor,
                norm,
                act,
            } => {
                let w = tape.param_from(params, weight);
                let b = tape.param_from(params, bias);
                (tape.conv_transpose2d(x, w, b, factor)?, norm, act)
            }
            Unit::Pool => {
                skips.push(x);
                return tape.maxpool2x2(x);
            }
            Unit::UpConcat => {
                let up = tape.upsample_nearest2x(x)?;
                let skip = skips
                    .pop()
                    .ok_or_else(|| Error::shape("decoder ran out of skip features"))?;
                return tape.concat_channels(up, skip);
            }
        };
        let y = match norm {
            Some(n) => {
                let g = tape.param_from(params, n.gamma);
                let b = tape.param_from(params, n.beta);
                match self.pass.mode {
                    Mode::Train => {
                        let (y, stats) = tape.batch_norm_train(y, g, b)?;
                        self.pass.updates.push((n.slot, stats));
                        y
                    }
                    Mode::Eval => {
                        let rs = &self.model.running[n.slot];
                        tape.batch_norm_eval(y, g, b, &rs.mean, &rs.var)?
                    }
                }
            }
            None => y,
        };
        Ok(match act {
            Activation::Leaky => tape.leaky_relu(y, T::from_f64(LEAKY_SLOPE)),
            Activation::Sigmoid => tape.sigmoid(y),
            Activation::Identity => y,
        })
    }

    fn encoder(&mut self, units: &[Unit], mut x: Var) -> Result<(Var, Vec<Var>)> {
        let mut skips = Vec::new();
        for u in units {
            x = self.apply(u, x, &mut skips)?;
        }
        Ok((x, skips))
    }

    fn decoder(&mut self, units: &[Unit], mut x: Var, mut skips: Vec<Var>) -> Result<Var> {
        for u in units {
            x = self.apply(u, x, &mut skips)?;
        }
        Ok(x)
    }

    fn net(&mut self, net: &Net, x: Var) -> Result<(Var, Var, Vec<Var>)> {
        let (feature, skips) = self.encoder(&net.encoder, x)?;
        let out = self.decoder(&net.decoder, feature, skips.clone())?;
        Ok((out, feature, skips))
    }
}

impl<T: Scalar> SniderModel<T> {
    pub fn kind(&self) -> VariantKind {
        self.variant.kind
    }

    pub fn variant(&self) -> &NetworkVariant {
        &self.variant
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.running
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Names of the parameters belonging to one sub-network (`g_d`, `g_r`,
    /// `d_s` or `d_c`).
    pub fn is_in(name: &str, net: &str) -> bool {
        name.strip_prefix(net).is_some_and(|r| r.starts_with('.'))
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        let s = self.input_size;
        match shape {
            [b, c, h, w] if *b > 0 && *c == IMAGE_CHANNELS && *h == s && *w == s => Ok(()),
            _ => Err(Error::shape(format!(
                "expected a [batch, {IMAGE_CHANNELS}, {s}, {s}] image batch, got {shape:?}"
            ))),
        }
    }

    /// Denoiser then rectifier; the fused feature is the elementwise sum of
    /// both final encoder features.
    pub fn forward_main(&self, pass: &mut Pass<T>, input: Var) -> Result<MainOutputs> {
        self.check_image(pass.tape.shape(input))?;
        let mut r = Runner { model: self, pass };
        let (denoised, d_feat, d_skips) = r.net(&self.g_d, input)?;
        let (rectified, r_feat, r_skips) = r.net(&self.g_r, denoised)?;
        let tape = &mut r.pass.tape;
        let feature = tape.add(d_feat, r_feat)?;
        let skips = d_skips
            .iter()
            .zip(&r_skips)
            .map(|(&a, &b)| tape.add(a, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(MainOutputs {
            denoised,
            rectified,
            denoiser_feature: d_feat,
            rectifier_feature: r_feat,
            fused: Fused { feature, skips },
        })
    }

    /// Denoiser only.
    pub fn forward_denoiser(&self, pass: &mut Pass<T>, input: Var) -> Result<Var> {
        self.check_image(pass.tape.shape(input))?;
        let mut r = Runner { model: self, pass };
        Ok(r.net(&self.g_d, input)?.0)
    }

    /// Segmentation map `[B,1,H,W]` and count `[B,1]` from the fused feature.
    pub fn forward_aux(&self, pass: &mut Pass<T>, fused: &Fused) -> Result<AuxOutputs> {
        let shape = pass.tape.shape(fused.feature).to_vec();
        let (c, n) = (
            self.variant.fused_channels(),
            self.variant.fused_size(self.input_size),
        );
        let batch = match shape[..] {
            [b, cc, h, w] if b > 0 && cc == c && h == n && w == n => b,
            _ => {
                return Err(Error::shape(format!(
                    "expected a fused feature of shape [batch, {c}, {n}, {n}], got {shape:?}"
                )))
            }
        };
        let mut r = Runner { model: self, pass };
        let segment = r.decoder(&self.d_s, fused.feature, fused.skips.clone())?;
        let mut x = fused.feature;
        let mut none = Vec::new();
        for u in &self.d_c {
            x = r.apply(u, x, &mut none)?;
        }
        let count = r.pass.tape.reshape(x, [batch, 1])?;
        Ok(AuxOutputs { segment, count })
    }

    /// Folds the batch statistics proposed by a train-mode pass into the
    /// running statistics.
    pub fn commit_norm_updates(&mut self, updates: &[(usize, BatchStats<T>)]) {
        let m = T::from_f64(NORM_MOMENTUM);
        let one_minus = T::from_f64(1.0 - NORM_MOMENTUM);
        for (slot, stats) in updates {
            let rs = &mut self.running[*slot];
            for (r, &b) in rs.mean.iter_mut().zip(&stats.mean) {
                *r = m * *r + one_minus * b;
            }
            for (r, &b) in rs.var.iter_mut().zip(&stats.var) {
                *r = m * *r + one_minus * b;
            }
        }
    }

    /// Eval-mode recovery: the rectifier applied to the denoiser output. The
    /// auxiliary heads are not run.
    pub fn recover(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image(input.shape())?;
        let mut pass = Pass::new(Mode::Eval);
        let x = pass.tape.input(input.clone());
        let mut r = Runner {
            model: self,
            pass: &mut pass,
        };
        let (denoised, _, _) = r.net(&self.g_d, x)?;
        let (rectified, _, _) = r.net(&self.g_r, denoised)?;
        Ok(pass.tape.value(rectified).clone())
    }

    /// Eval-mode denoiser output alone.
    pub fn denoise(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut pass = Pass::new(Mode::Eval);
        let x = pass.tape.input(input.clone());
        let y = self.forward_denoiser(&mut pass, x)?;
        Ok(pass.tape.value(y).clone())
    }
}
