use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::image::Image;
use crate::error::{Error, Result};

/// Downsampling factor of the degradation.
pub const DEGRADE_FACTOR: usize = 4;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

/// Rotates about the image centre by `angle_deg` (positive is
/// counter-clockwise as displayed) with bilinear sampling. Samples that fall
/// outside the source take `fill`.
pub fn rotate(image: &Image, angle_deg: f64, fill: f32) -> Image {
    if angle_deg == 0.0 {
        return image.clone();
    }
    let (h, w) = (image.height(), image.width());
    let theta = angle_deg.to_radians();
    let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = Image::filled(image.channels(), h, w, fill);
    let fill = fill as f64;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse map: where this output pixel comes from
            let sx = snap(cx + cos * dx - sin * dy);
            let sy = snap(cy + sin * dx + cos * dy);
            if sx <= -1.0 || sy <= -1.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..image.channels() {
                let px = |xx: isize, yy: isize| -> f64 {
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        fill
                    } else {
                        image.get(c, yy as usize, xx as usize) as f64
                    }
                };
                let top = if fx == 0.0 {
                    px(x0, y0)
                } else {
                    px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx
                };
                let v = if fy == 0.0 {
                    top
                } else {
                    let bottom = if fx == 0.0 {
                        px(x0, y0 + 1)
                    } else {
                        px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx
                    };
                    top * (1.0 - fy) + bottom * fy
                };
                out.set(c, y, x, v as f32);
            }
        }
    }
    out
}

/// Averages each `factor x factor` block.
pub fn downsample_area(image: &Image, factor: usize) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!(
            "{h}x{w} image is not divisible by {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let area = (factor * factor) as f64;
    let mut data = Vec::with_capacity(image.channels() * oh * ow);
    for c in 0..image.channels() {
        for by in 0..oh {
            for bx in 0..ow {
                let mut s = 0.0f64;
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        s += image.get(c, y, x) as f64;
                    }
                }
                data.push((s / area) as f32);
            }
        }
    }
    Image::new(image.channels(), oh, ow, data)
}

/// Bilinear enlargement by `factor` with pixel centres aligned at half-pixel
/// offsets and edges clamped.
pub fn upsample_bilinear(image: &Image, factor: usize) -> Image {
    let (h, w) = (image.height(), image.width());
    let (oh, ow) = (h * factor, w * factor);
    let coord = |o: usize, n: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Image::filled(image.channels(), oh, ow, 0.0);
    for c in 0..image.channels() {
        for y in 0..oh {
            let (y0, y1, fy) = coord(y, h);
            for x in 0..ow {
                let (x0, x1, fx) = coord(x, w);
                let p = |yy, xx| image.get(c, yy, xx) as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.set(c, y, x, (top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    out
}

/// Low-quality version of `image`: 4x area downsampling, bilinear upsampling
/// back to the original size, then optional Gaussian noise clamped to
/// `[0, 1]`.
pub fn degrade(image: &Image, noise_sigma: f32, seed: u64) -> Result<Image> {
    if noise_sigma.is_nan() || noise_sigma < 0.0 {
        return Err(Error::invalid(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    let small = downsample_area(image, DEGRADE_FACTOR)?;
    let mut out = upsample_bilinear(&small, DEGRADE_FACTOR);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma as f64).expect("sigma checked");
        for v in out.data_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}
