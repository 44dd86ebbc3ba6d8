//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and what its
//! backward rule needs. Nodes only reference earlier nodes, so the reverse of
//! insertion order is a valid reverse topological order and the backward pass
//! is a single sweep.

use crate::autodiff::kernels::{self, ConvShape, ConvSpec, DeconvShape};
use crate::autodiff::param::{ParamId, ParamStore, Parameter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        shape: ConvShape,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        shape: DeconvShape,
    },
    MaxPool2x2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2x {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Sigmoid {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    /// Scalar loss whose gradient w.r.t. `pred` was computed in the forward
    /// pass.
    Loss {
        pred: Var,
        local: Vec<T>,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased per-channel variance.
    pub var: Vec<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `((w0*l0 + w1*l1) + w2*l2) + ...` evaluated left to right.
pub fn weighted_total<T: Scalar>(terms: &[(T, T)]) -> T {
    terms
        .iter()
        .fold(T::zero(), |acc, &(value, weight)| acc + weight * value)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows to it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is retained and readable from [`Gradients`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId, p: &Parameter<T>) -> Var {
        self.push(p.value.clone(), Op::Param(id), true)
    }

    pub fn param_from(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.param(id, store.get(id))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv2d_with(input, kernel, bias, ConvSpec::symmetric(stride, padding))
    }

    pub fn conv2d_with(&mut self, input: Var, kernel: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let shape = ConvShape::new(self.shape(input), self.shape(kernel), spec)?;
        if self.shape(bias) != [shape.out_channels] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {} output channels",
                self.shape(bias),
                shape.out_channels
            )));
        }
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &shape,
        );
        let value = Tensor::new(shape.output_shape(), out)?;
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                shape,
            },
            rg,
        ))
    }

    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, bias: Var, up_factor: usize) -> Result<Var> {
        let shape = DeconvShape::new(self.shape(input), self.shape(kernel), up_factor)?;
        if self.shape(bias) != [shape.out_channels] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {} output channels",
                self.shape(bias),
                shape.out_channels
            )));
        }
        let out = kernels::conv_transpose2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &shape,
        );
        let value = Tensor::new(shape.output_shape(), out)?;
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                shape,
            },
            rg,
        ))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let (out, argmax) = kernels::maxpool2x2_forward(self.value(input).data(), (b, c, h, w))?;
        let value = Tensor::new([b, c, h / 2, w / 2], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::MaxPool2x2 { input, argmax }, rg))
    }

    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let out = kernels::upsample_nearest2x_forward(self.value(input).data(), (b, c, h, w));
        let value = Tensor::new([b, c, 2 * h, 2 * w], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Upsample2x { input }, rg))
    }

    /// Concatenates along channels, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, ha, wa) = self.value(a).dims4()?;
        let (bb, cb, hb, wb) = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape(format!(
                "cannot concat {:?} with {:?}: batch/spatial dims differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(ba * (ca + cb) * plane);
        for i in 0..ba {
            data.extend_from_slice(&self.value(a).data()[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&self.value(b).data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let value = Tensor::new([ba, ca + cb, ha, wa], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    fn check_channel_params(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (b, c, h, w) = self.value(input).dims4()?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batch norm affine params {:?}/{:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok((b, c, h * w))
    }

    /// Training-mode batch norm: normalizes each channel over batch and space.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>)> {
        let (b, c, plane) = self.check_channel_params(input, gamma, beta)?;
        let n = b * plane;
        if n < 2 {
            return Err(Error::invalid(format!(
                "batch norm in train mode needs at least 2 values per channel, got {n}"
            )));
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        let mut xhat = vec![T::zero(); x.len()];
        for ch in 0..c {
            let values = (0..b).flat_map(|i| {
                let s = (i * c + ch) * plane;
                x[s..s + plane].iter()
            });
            let m = values.clone().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            let ss = values.map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
            let biased = ss / n as f64;
            let istd = 1.0 / (biased + BATCH_NORM_EPS).sqrt();
            mean[ch] = T::from_f64(m);
            var[ch] = T::from_f64(ss / (n - 1) as f64);
            inv_std[ch] = T::from_f64(istd);
        }
        let mut out = vec![T::zero(); x.len()];
        for i in 0..b {
            for ch in 0..c {
                let s = (i * c + ch) * plane;
                for j in s..s + plane {
                    let xh = (x[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = g[ch] * xh + be[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(input).to_vec(), out)?;
        let rg = self.rg(&[input, gamma, beta]);
        let v = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((v, BatchStats { mean, var }))
    }

    /// Eval-mode batch norm using fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<Var> {
        let (b, c, plane) = self.check_channel_params(input, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("running statistics do not match channel count"));
        }
        let eps = T::from_f64(BATCH_NORM_EPS);
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for i in 0..b {
            for ch in 0..c {
                let s = (i * c + ch) * plane;
                for j in s..s + plane {
                    let xh = (x[j] - running_mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = g[ch] * xh + be[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(input).to_vec(), out)?;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::ChannelAffine {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let value = self
            .value(input)
            .map(|x| if x > T::zero() { x } else { slope * x });
        let rg = self.rg(&[input]);
        self.push(value, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| T::one() / (T::one() + (-x).exp()));
        let rg = self.rg(&[input]);
        self.push(value, Op::Sigmoid { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum::<T>();
        let rg = self.rg(&[input]);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    fn loss_shapes(&self, pred: Var, target: &Tensor<T>, what: &str) -> Result<usize> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(format!(
                "{what}: prediction {:?} and target {:?} differ",
                self.shape(pred),
                target.shape()
            )));
        }
        if target.is_empty() {
            return Err(Error::shape(format!("{what}: empty tensors")));
        }
        Ok(target.len())
    }

    fn push_loss(&mut self, pred: Var, total: f64, n: usize, local: Vec<T>) -> Var {
        let rg = self.rg(&[pred]);
        let value = Tensor::scalar(T::from_f64(total / n as f64));
        self.push(value, Op::Loss { pred, local }, rg)
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let n = self.loss_shapes(pred, target, "mse_loss")?;
        let scale = T::from_f64(2.0 / n as f64);
        let mut total = 0.0;
        let local = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = p - t;
                total += (d * d).as_f64();
                scale * d
            })
            .collect();
        Ok(self.push_loss(pred, total, n, local))
    }

    /// Mean absolute error; the subgradient at zero difference is zero.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let n = self.loss_shapes(pred, target, "l1_loss")?;
        let scale = T::from_f64(1.0 / n as f64);
        let mut total = 0.0;
        let local = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = p - t;
                total += d.abs().as_f64();
                if d > T::zero() {
                    scale
                } else if d < T::zero() {
                    -scale
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(self.push_loss(pred, total, n, local))
    }

    /// Binary cross-entropy `-mean(t ln p + (1-t) ln(1-p))` with `p` clamped
    /// to `[1e-7, 1 - 1e-7]`. Targets must be exactly 0 or 1.
    pub fn bce_loss(&mut self, prob: Var, target: &Tensor<T>) -> Result<Var> {
        let n = self.loss_shapes(prob, target, "bce_loss")?;
        if let Some(bad) = target.data().iter().find(|&&t| t != T::zero() && t != T::one()) {
            return Err(Error::invalid(format!(
                "bce_loss target must be 0 or 1, found {bad}"
            )));
        }
        let lo = T::from_f64(BCE_CLAMP);
        let hi = T::one() - lo;
        let scale = T::from_f64(1.0 / n as f64);
        let mut total = 0.0;
        let local = self
            .value(prob)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let clamped = p < lo || p > hi;
                let pc = p.max(lo).min(hi);
                let positive = t == T::one();
                total -= if positive { pc.ln() } else { (T::one() - pc).ln() }.as_f64();
                if clamped {
                    T::zero()
                } else if positive {
                    -scale / pc
                } else {
                    scale / (T::one() - pc)
                }
            })
            .collect();
        Ok(self.push_loss(prob, total, n, local))
    }

    /// Weighted sum of scalar terms, accumulated in the given order.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut pairs = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            pairs.push((self.value(v).item()?, w));
        }
        let total = weighted_total(&pairs);
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            rg,
        ))
    }

    /// Runs the backward sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                op => self.propagate(op, &node.value, g, &mut grads)?,
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                shape,
            } => {
                let r = kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    &g,
                    shape,
                    self.wants(*input),
                );
                self.acc(grads, *kernel, r.kernel);
                self.acc(grads, *bias, r.bias);
                if let Some(dx) = r.input {
                    self.acc(grads, *input, dx);
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                shape,
            } => {
                let r = kernels::conv_transpose2d_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    &g,
                    shape,
                    self.wants(*input),
                );
                self.acc(grads, *kernel, r.kernel);
                self.acc(grads, *bias, r.bias);
                if let Some(dx) = r.input {
                    self.acc(grads, *input, dx);
                }
            }
            Op::MaxPool2x2 { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).len()];
                for (&idx, &gv) in argmax.iter().zip(&g) {
                    dx[idx] += gv;
                }
                self.acc(grads, *input, dx);
            }
            Op::Upsample2x { input } => {
                let dims = self.value(*input).dims4()?;
                self.acc(grads, *input, kernels::upsample_nearest2x_backward(&g, dims));
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(*a).dims4()?;
                let cb = self.value(*b).dims4()?.1;
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for i in 0..n {
                    let s = i * (ca + cb) * plane;
                    ga.extend_from_slice(&g[s..s + ca * plane]);
                    gb.extend_from_slice(&g[s + ca * plane..s + (ca + cb) * plane]);
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::Add { a, b } => {
                if a == b {
                    self.acc(grads, *a, g.iter().map(|&x| x + x).collect());
                } else {
                    self.acc(grads, *b, g.clone());
                    self.acc(grads, *a, g);
                }
            }
            Op::Mul { a, b } => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let ga = g.iter().zip(vb).map(|(&x, &y)| x * y).collect();
                let gb = g.iter().zip(va).map(|(&x, &y)| x * y).collect();
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (b, c, h, w) = self.value(*input).dims4()?;
                let plane = h * w;
                let n = (b * plane) as f64;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); g.len()];
                for ch in 0..c {
                    let idx = (0..b).flat_map(|i| {
                        let s = (i * c + ch) * plane;
                        s..s + plane
                    });
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for j in idx.clone() {
                        sum_g += g[j].as_f64();
                        sum_gx += (g[j] * xhat[j]).as_f64();
                    }
                    dgamma[ch] = T::from_f64(sum_gx);
                    dbeta[ch] = T::from_f64(sum_g);
                    // dx = gamma * inv_std / n * (n*g - sum(g) - xhat*sum(g*xhat))
                    let k = gm[ch] * inv_std[ch] / T::from_f64(n);
                    let nt = T::from_f64(n);
                    let sg = T::from_f64(sum_g);
                    let sgx = T::from_f64(sum_gx);
                    for j in idx {
                        dx[j] = k * (nt * g[j] - sg - xhat[j] * sgx);
                    }
                }
                self.acc(grads, *gamma, dgamma);
                self.acc(grads, *beta, dbeta);
                self.acc(grads, *input, dx);
            }
            Op::ChannelAffine {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (b, c, h, w) = self.value(*input).dims4()?;
                let plane = h * w;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); g.len()];
                for i in 0..b {
                    for ch in 0..c {
                        let s = (i * c + ch) * plane;
                        for j in s..s + plane {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                            dx[j] = g[j] * gm[ch] * inv_std[ch];
                        }
                    }
                }
                self.acc(grads, *gamma, dgamma);
                self.acc(grads, *beta, dbeta);
                self.acc(grads, *input, dx);
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let dx = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { *slope * gv })
                    .collect();
                self.acc(grads, *input, dx);
            }
            Op::Sigmoid { input } => {
                let dx = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                self.acc(grads, *input, dx);
            }
            Op::Reshape { input } => self.acc(grads, *input, g),
            Op::Sum { input } => {
                let n = self.value(*input).len();
                self.acc(grads, *input, vec![g[0]; n]);
            }
            Op::Loss { pred, local } => {
                let s = g[0];
                self.acc(grads, *pred, local.iter().map(|&l| s * l).collect());
            }
            Op::WeightedSum { terms } => {
                for &(v, w) in terms {
                    // zero-weight terms contribute nothing; skip their subgraphs
                    if w != T::zero() {
                        self.acc(grads, v, vec![g[0] * w]);
                    }
                }
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Parameter ids referenced by this tape, in recording order.
    pub fn param_nodes(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }
}

/// Gradients of leaves (inputs marked with [`Tape::leaf`] and parameters)
/// produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into `store`. Parameters the loss does not
    /// reach keep their current gradient.
    pub fn accumulate_into(&self, tape: &Tape<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (v, id) in tape.param_nodes() {
            if let Some(g) = self.get(v) {
                store.get_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// Backpropagates `loss` and accumulates parameter gradients into `store`.
pub fn backward<T: Scalar>(tape: &Tape<T>, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
    tape.backward(loss)?.accumulate_into(tape, store)
}
