//! Character codepoints to 36×36 glyph images.

mod fixture;
mod image;
mod provider;

pub use fixture::{
    composite_char, decompose, FixtureSet, COMPOSITE_BASE, FULL_BLOCK, RADICAL_COUNT, VARIANT_COUNT,
};
pub use image::{mask_half, GlyphImage, Half, GLYPH_PIXELS, GLYPH_SIZE, HALF};
pub use provider::{pgm_file_name, tofu, GlyphConfig, GlyphProvider};
