use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Planar (channel-major) image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Per-pixel mean over channels.
    pub fn to_gray(&self) -> Vec<f32> {
        let n = self.height * self.width;
        if self.channels == 1 {
            return self.data.clone();
        }
        (0..n)
            .map(|i| {
                let s: f64 = (0..self.channels).map(|c| self.data[c * n + i] as f64).sum();
                (s / self.channels as f64) as f32
            })
            .collect()
    }

    /// Rounds every value to the nearest multiple of 1/255 in `[0, 1]`, the
    /// set representable exactly by 8-bit netpbm files.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| to_byte(v) as f32 / 255.0).collect(),
            ..*self
        }
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            [1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("image dims are consistent")
    }

    /// Batch item `index` of a `[B, C, H, W]` tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Image> {
        let (b, c, h, w) = t.dims4()?;
        if index >= b {
            return Err(Error::shape(format!("batch index {index} out of range for {b}")));
        }
        let item = c * h * w;
        let data = t.data()[index * item..(index + 1) * item]
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        Image::new(c, h, w, data)
    }

    /// Stacks equally sized images into a `[B, C, H, W]` tensor.
    pub fn batch<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images.first().ok_or_else(|| Error::shape("empty image batch"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if (im.channels, im.height, im.width) != (first.channels, first.height, first.width) {
                return Err(Error::shape("images in a batch must share their dimensions"));
            }
            data.extend(im.data.iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::new([images.len(), first.channels, first.height, first.width], data)
    }

    /// Encodes as binary PPM (three channels) or PGM (one channel), 8 bits.
    pub fn to_netpbm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::shape(format!("netpbm needs 1 or 3 channels, got {c}"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        let n = self.height * self.width;
        out.reserve(n * self.channels);
        for i in 0..n {
            for c in 0..self.channels {
                out.push(to_byte(self.data[c * n + i]));
            }
        }
        Ok(out)
    }

    pub fn from_netpbm(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(format!("unsupported netpbm magic `{m}`")),
        };
        let mut number = |what: &str| -> std::result::Result<usize, String> {
            let tok = header_token(bytes, &mut pos)?;
            tok.parse::<usize>()
                .map_err(|_| format!("invalid {what} `{tok}`"))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(format!("only maxval 255 is supported, got {maxval}"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = width * height;
        let raster = bytes
            .get(pos..pos + n * channels)
            .ok_or_else(|| format!("raster truncated: need {} bytes after offset {pos}", n * channels))?;
        let mut data = vec![0.0; n * channels];
        for i in 0..n {
            for c in 0..channels {
                data[c * n + i] = raster[i * channels + c] as f32 / 255.0;
            }
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_netpbm()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Image> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_netpbm(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<String, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("unexpected end of header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}
