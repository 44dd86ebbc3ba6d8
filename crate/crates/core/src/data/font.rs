//! A 5x7 bitmap font for the ten digits.

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;

const DIGITS: [[&str; GLYPH_HEIGHT]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

/// One character's binary bitmap, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    pub ch: char,
    pub bits: [[bool; GLYPH_WIDTH]; GLYPH_HEIGHT],
}

impl Glyph {
    pub fn ink(&self, row: usize, col: usize) -> bool {
        self.bits[row][col]
    }

    pub fn ink_count(&self) -> usize {
        self.bits.iter().flatten().filter(|&&b| b).count()
    }
}

/// The glyphs available to the renderer and the recognizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphSet {
    glyphs: Vec<Glyph>,
}

impl GlyphSet {
    pub fn digits() -> Self {
        let glyphs = DIGITS
            .iter()
            .enumerate()
            .map(|(d, rows)| {
                let mut bits = [[false; GLYPH_WIDTH]; GLYPH_HEIGHT];
                for (r, row) in rows.iter().enumerate() {
                    for (c, b) in row.bytes().enumerate() {
                        bits[r][c] = b == b'#';
                    }
                }
                Glyph {
                    ch: char::from(b'0' + d as u8),
                    bits,
                }
            })
            .collect();
        GlyphSet { glyphs }
    }

    pub fn from_glyphs(glyphs: Vec<Glyph>) -> Self {
        GlyphSet { glyphs }
    }

    pub fn get(&self, ch: char) -> Option<&Glyph> {
        self.glyphs.iter().find(|g| g.ch == ch)
    }

    pub fn glyphs(&self) -> &[Glyph] {
        &self.glyphs
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }
}

impl Default for GlyphSet {
    fn default() -> Self {
        Self::digits()
    }
}
