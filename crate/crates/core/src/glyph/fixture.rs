//! Procedural glyph sets that need no font file.
//!
//! The `radicals` set builds characters the way logographic scripts do:
//! an 18×18 "radical" sub-bitmap in the top-left quadrant plus a thin
//! variant mark in the bottom-right quadrant. Characters that share a
//! radical share that quadrant pixel-for-pixel.

use super::image::{GlyphImage, HALF};

/// Number of distinct radicals in the `radicals` set.
pub const RADICAL_COUNT: usize = 12;
/// Variant marks per radical.
pub const VARIANT_COUNT: usize = 256;
/// First codepoint of the composite range (Private Use Area).
pub const COMPOSITE_BASE: u32 = 0xE000;
pub const FULL_BLOCK: char = '\u{2588}';

/// Stroke triples from the eight primitive strokes; any two share at most
/// two strokes.
const RADICAL_STROKES: [[usize; 3]; RADICAL_COUNT] = [
    [0, 3, 6],
    [0, 4, 7],
    [1, 3, 5],
    [2, 4, 6],
    [0, 1, 5],
    [1, 2, 3],
    [3, 4, 7],
    [0, 2, 4],
    [1, 6, 7],
    [2, 5, 7],
    [0, 5, 6],
    [2, 3, 7],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FixtureSet {
    Radicals,
}

impl FixtureSet {
    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "radicals" => Some(FixtureSet::Radicals),
            _ => None,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            FixtureSet::Radicals => "radicals",
        }
    }

    /// `None` for codepoints outside the set.
    pub fn render(self, c: char) -> Option<GlyphImage> {
        match self {
            FixtureSet::Radicals => render_radicals(c),
        }
    }
}

/// Codepoint of the composite with `radical` in the top-left quadrant and
/// variant mark `variant` in the bottom-right.
pub fn composite_char(radical: usize, variant: usize) -> char {
    assert!(radical < RADICAL_COUNT && variant < VARIANT_COUNT);
    char::from_u32(COMPOSITE_BASE + (radical * VARIANT_COUNT + variant) as u32).expect("PUA scalar")
}

/// Inverse of [`composite_char`].
pub fn decompose(c: char) -> Option<(usize, usize)> {
    let off = (c as u32).checked_sub(COMPOSITE_BASE)? as usize;
    (off < RADICAL_COUNT * VARIANT_COUNT).then_some((off / VARIANT_COUNT, off % VARIANT_COUNT))
}

fn render_radicals(c: char) -> Option<GlyphImage> {
    if c == ' ' {
        return Some(GlyphImage::blank());
    }
    if c == FULL_BLOCK {
        return Some(GlyphImage::filled(1.0));
    }
    let (radical, variant) = decompose(c)?;
    let mut img = GlyphImage::blank();
    for &s in &RADICAL_STROKES[radical] {
        draw_stroke(&mut img, 0, 0, s, 2);
    }
    for bit in 0..8 {
        if variant >> bit & 1 == 1 {
            draw_stroke(&mut img, HALF, HALF, bit, 1);
        }
    }
    Some(img)
}

/// Draws primitive stroke `s` into the 18×18 cell at (`top`, `left`).
fn draw_stroke(img: &mut GlyphImage, top: usize, left: usize, s: usize, width: usize) {
    let (lo, hi) = (2usize, 16usize);
    let mut put = |r: usize, c: usize| img.set(top + r, left + c, 1.0);
    match s {
        0..=2 => {
            let row = [3, 8, 13][s];
            for r in row..row + width {
                for c in lo..hi {
                    put(r, c);
                }
            }
        }
        3..=5 => {
            let col = [3, 8, 13][s - 3];
            for c in col..col + width {
                for r in lo..hi {
                    put(r, c);
                }
            }
        }
        6 => {
            for i in lo..hi {
                for w in 0..width {
                    put(i, (i + w).min(hi));
                }
            }
        }
        7 => {
            for i in lo..hi {
                for w in 0..width {
                    put(i, (lo + hi - 1 - i + w).min(hi));
                }
            }
        }
        _ => unreachable!("eight primitive strokes"),
    }
}
