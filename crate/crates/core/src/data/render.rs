use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::font::{GlyphSet, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::data::image::Image;
use crate::error::{Error, Result};

/// Plate geometry and intensities. Margins and spacing are in glyph cells,
/// i.e. multiples of the glyph scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub background: f32,
    pub foreground: f32,
    pub margin: usize,
    pub spacing: usize,
}

impl Default for Layout {
    fn default() -> Self {
        // both intensities are multiples of 1/255, so rendering is exact in 8 bits
        Layout {
            background: 217.0 / 255.0,
            foreground: 26.0 / 255.0,
            margin: 1,
            spacing: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateSpec {
    pub digits: String,
    pub layout: Layout,
    /// Draws a solid logo block in the top-left corner.
    pub decoration: bool,
}

impl PlateSpec {
    pub fn new(digits: impl Into<String>) -> Self {
        PlateSpec {
            digits: digits.into(),
            layout: Layout::default(),
            decoration: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharBox {
    pub ch: char,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CharBox {
    fn overlaps(&self, other: &CharBox) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPlate {
    pub image: Image,
    pub boxes: Vec<CharBox>,
    pub logo: Option<CharBox>,
}

pub const MIN_SIZE: usize = 32;

/// Pixels per font cell for a square plate of side `size`.
pub fn glyph_scale(size: usize) -> usize {
    (size / MIN_SIZE).max(1)
}

fn text_width(n: usize, g: usize, layout: &Layout) -> usize {
    n * GLYPH_WIDTH * g + n.saturating_sub(1) * layout.spacing * g
}

/// Longest digit string that fits on a plate of side `size`.
pub fn max_digits(size: usize, layout: &Layout) -> usize {
    let g = glyph_scale(size);
    (0..=size)
        .take_while(|&n| text_width(n, g, layout) + 2 * layout.margin * g <= size)
        .last()
        .unwrap_or(0)
}

/// Renders dark digits on a uniform plate. The seed jitters the text block
/// position by at most one glyph cell in each direction.
pub fn render_plate(spec: &PlateSpec, size: usize, seed: u64) -> Result<RenderedPlate> {
    if size < MIN_SIZE {
        return Err(Error::invalid(format!("plate size {size} is below {MIN_SIZE}")));
    }
    let glyphs = GlyphSet::digits();
    let layout = &spec.layout;
    let chars: Vec<_> = spec
        .digits
        .chars()
        .map(|c| {
            glyphs
                .get(c)
                .ok_or_else(|| Error::invalid(format!("no glyph for character {c:?}")))
        })
        .collect::<Result<_>>()?;
    let g = glyph_scale(size);
    let (tw, th) = (text_width(chars.len(), g, layout), GLYPH_HEIGHT * g);
    let margin = layout.margin * g;
    if tw + 2 * margin > size || th + 2 * margin > size {
        return Err(Error::invalid(format!(
            "overfull layout: {} digits need {} px on a {size} px plate",
            chars.len(),
            tw + 2 * margin
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng, slack: usize| -> isize {
        let j = slack.min(g) as i64;
        rng.random_range(-j..=j) as isize
    };
    let x0 = ((size - tw) / 2) as isize + jitter(&mut rng, (size - tw) / 2 - margin);
    let y0 = ((size - th) / 2) as isize + jitter(&mut rng, (size - th) / 2 - margin);
    let (x0, y0) = (x0 as usize, y0 as usize);

    let mut image = Image::filled(3, size, size, layout.background);
    let mut boxes = Vec::with_capacity(chars.len());
    for (i, glyph) in chars.iter().enumerate() {
        let bx = x0 + i * (GLYPH_WIDTH + layout.spacing) * g;
        for r in 0..GLYPH_HEIGHT {
            for c in 0..GLYPH_WIDTH {
                if glyph.ink(r, c) {
                    fill_rect(&mut image, bx + c * g, y0 + r * g, g, g, layout.foreground);
                }
            }
        }
        boxes.push(CharBox {
            ch: glyph.ch,
            x: bx,
            y: y0,
            width: GLYPH_WIDTH * g,
            height: th,
        });
    }
    let logo = if spec.decoration {
        let logo = CharBox {
            ch: '#',
            x: margin,
            y: margin,
            width: 3 * g,
            height: 3 * g,
        };
        if boxes.iter().any(|b| b.overlaps(&logo)) {
            return Err(Error::invalid("overfull layout: logo overlaps the text"));
        }
        fill_rect(
            &mut image,
            logo.x,
            logo.y,
            logo.width,
            logo.height,
            layout.foreground,
        );
        Some(logo)
    } else {
        None
    };
    Ok(RenderedPlate { image, boxes, logo })
}

fn fill_rect(image: &mut Image, x: usize, y: usize, w: usize, h: usize, v: f32) {
    for c in 0..image.channels() {
        for yy in y..y + h {
            for xx in x..x + w {
                image.set(c, yy, xx, v);
            }
        }
    }
}
