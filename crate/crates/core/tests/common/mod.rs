#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snider_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Direct cross-correlation with zero padding, one output element at a time.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    pad_begin: usize,
    pad_end: usize,
) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (o, _, k, _) = w.dims4().unwrap();
    let oh = (h + pad_begin + pad_end - k) / stride + 1;
    let ow = (wd + pad_begin + pad_end - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for bi in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (y * stride + ki) as isize - pad_begin as isize;
                                let ix = (xo * stride + kj) as isize - pad_begin as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oc * c + ic) * k + ki) * k + kj];
                            }
                        }
                    }
                    out[((bi * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::new([n, o, oh, ow], out).unwrap()
}

/// Transposed convolution by scattering every input pixel's weighted kernel
/// into the enlarged output, then cropping `crop_begin` rows/cols at the
/// start so the output is `factor` times the input.
pub fn naive_conv_transpose2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], factor: usize) -> Tensor<f64> {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (_, co, k, _) = w.dims4().unwrap();
    let crop = (k - factor) / 2;
    let (oh, ow) = (h * factor, wd * factor);
    let mut out = vec![0.0; n * co * oh * ow];
    for bi in 0..n {
        for oc in 0..co {
            for v in out[((bi * co + oc) * oh * ow)..((bi * co + oc + 1) * oh * ow)].iter_mut() {
                *v = b[oc];
            }
        }
        for ic in 0..ci {
            for y in 0..h {
                for xi in 0..wd {
                    let v = x.data()[((bi * ci + ic) * h + y) * wd + xi];
                    for oc in 0..co {
                        for ki in 0..k {
                            for kj in 0..k {
                                let oy = (y * factor + ki) as isize - crop as isize;
                                let ox = (xi * factor + kj) as isize - crop as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                out[((bi * co + oc) * oh + oy as usize) * ow + ox as usize] +=
                                    v * w.data()[((ic * co + oc) * k + ki) * k + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, co, oh, ow], out).unwrap()
}

/// Central finite difference of `f` w.r.t. every element of `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
