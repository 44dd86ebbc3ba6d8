use crate::data::{glyph_scale, GlyphSet, Image, GLYPH_HEIGHT, GLYPH_WIDTH};

/// Minimum normalized cross-correlation for a template match.
pub const MATCH_THRESHOLD: f64 = 0.6;
/// Matches closer than this many glyph widths suppress each other.
pub const SUPPRESSION_WIDTHS: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharMatch {
    /// Left edge of the matched template.
    pub x: usize,
    pub y: usize,
    pub ch: char,
    /// Normalized cross-correlation in `[-1, 1]`.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionResult {
    pub predicted: String,
    /// One entry per predicted character, left to right.
    pub per_char: Vec<CharMatch>,
}

/// Zero-mean template with ink dark, as rendered.
struct Template {
    ch: char,
    width: usize,
    values: Vec<f64>,
    norm: f64,
}

impl Template {
    fn new(glyph: &crate::data::Glyph, g: usize) -> Self {
        let (width, height) = (GLYPH_WIDTH * g, GLYPH_HEIGHT * g);
        let raw: Vec<f64> = (0..height * width)
            .map(|i| {
                if glyph.ink((i / width) / g, (i % width) / g) {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let values: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Template {
            ch: glyph.ch,
            width,
            values,
            norm,
        }
    }
}

/// Template matcher over a plate image. Every glyph is correlated at every
/// position where it fits; matches scoring at least [`MATCH_THRESHOLD`] are
/// accepted greedily by descending score, skipping any within
/// [`SUPPRESSION_WIDTHS`] glyph widths (horizontally) of one already taken.
/// The glyph scale follows the renderer's for the image height.
pub fn recognize(image: &Image, glyphs: &GlyphSet) -> RecognitionResult {
    let (h, w) = (image.height(), image.width());
    let g = glyph_scale(h);
    let gray: Vec<f64> = image.to_gray().iter().map(|&v| v as f64).collect();
    let templates: Vec<Template> = glyphs
        .glyphs()
        .iter()
        .map(|gl| Template::new(gl, g))
        .filter(|t| t.norm > 0.0)
        .collect();
    let (tw, th) = (GLYPH_WIDTH * g, GLYPH_HEIGHT * g);
    let mut candidates = Vec::new();
    if templates.is_empty() || tw > w || th > h {
        return RecognitionResult {
            predicted: String::new(),
            per_char: Vec::new(),
        };
    }
    let n = (tw * th) as f64;
    for y in 0..=h - th {
        for x in 0..=w - tw {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for r in 0..th {
                for &p in &gray[(y + r) * w + x..(y + r) * w + x + tw] {
                    sum += p;
                    sq += p * p;
                }
            }
            let var = sq - sum * sum / n;
            if var <= 1e-9 * n {
                continue;
            }
            let patch_norm = var.sqrt();
            for t in &templates {
                // the template is zero-mean, so the patch mean drops out
                let mut dot = 0.0;
                for r in 0..th {
                    let row = &gray[(y + r) * w + x..(y + r) * w + x + tw];
                    let trow = &t.values[r * t.width..(r + 1) * t.width];
                    dot += row.iter().zip(trow).map(|(a, b)| a * b).sum::<f64>();
                }
                let score = dot / (patch_norm * t.norm);
                if score >= MATCH_THRESHOLD {
                    candidates.push(CharMatch {
                        x,
                        y,
                        ch: t.ch,
                        score,
                    });
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.x.cmp(&b.x))
            .then(a.y.cmp(&b.y))
            .then(a.ch.cmp(&b.ch))
    });
    let min_gap = SUPPRESSION_WIDTHS * tw as f64;
    let mut taken: Vec<CharMatch> = Vec::new();
    for c in candidates {
        if taken.iter().all(|t| (t.x as f64 - c.x as f64).abs() >= min_gap) {
            taken.push(c);
        }
    }
    taken.sort_by_key(|c| c.x);
    RecognitionResult {
        predicted: taken.iter().map(|c| c.ch).collect(),
        per_char: taken,
    }
}
