use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Side length of every glyph image.
pub const GLYPH_SIZE: usize = 36;
/// Row/column where an image splits into halves.
pub const HALF: usize = GLYPH_SIZE / 2;
pub const GLYPH_PIXELS: usize = GLYPH_SIZE * GLYPH_SIZE;

/// 36×36 grayscale glyph, row-major, ink = 1 and background = 0.
#[derive(Clone, PartialEq)]
pub struct GlyphImage {
    pixels: Box<[f32; GLYPH_PIXELS]>,
}

impl fmt::Debug for GlyphImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GlyphImage(ink_sum={:.3})", self.ink_sum())
    }
}

impl Default for GlyphImage {
    fn default() -> Self {
        Self::blank()
    }
}

/// Which half of the image survives a [`mask_half`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Half {
    Upper,
    Lower,
    Left,
    Right,
}

impl Half {
    pub const ALL: [Half; 4] = [Half::Upper, Half::Lower, Half::Left, Half::Right];

    pub fn name(self) -> &'static str {
        match self {
            Half::Upper => "upper",
            Half::Lower => "lower",
            Half::Left => "left",
            Half::Right => "right",
        }
    }

    fn contains(self, row: usize, col: usize) -> bool {
        match self {
            Half::Upper => row < HALF,
            Half::Lower => row >= HALF,
            Half::Left => col < HALF,
            Half::Right => col >= HALF,
        }
    }
}

impl GlyphImage {
    pub fn blank() -> Self {
        Self::filled(0.0)
    }

    pub fn filled(value: f32) -> Self {
        Self {
            pixels: Box::new([value; GLYPH_PIXELS]),
        }
    }

    /// Builds an image from row-major pixels, clamping into `[0, 1]`.
    pub fn from_pixels(pixels: &[f32]) -> Result<Self> {
        if pixels.len() != GLYPH_PIXELS {
            return Err(Error::contract(format!(
                "glyph needs {GLYPH_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        let mut img = Self::blank();
        for (d, &s) in img.pixels.iter_mut().zip(pixels) {
            *d = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
        }
        Ok(img)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels[..]
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * GLYPH_SIZE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.pixels[row * GLYPH_SIZE + col] = value.clamp(0.0, 1.0);
    }

    /// Sum of intensities.
    pub fn ink_sum(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum()
    }

    /// Mean intensity over the grid.
    pub fn ink_fraction(&self) -> f64 {
        self.ink_sum() / GLYPH_PIXELS as f64
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0)
    }

    /// Quantized bytes, `round(255 * p)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p * 255.0).round() as u8)
            .collect()
    }

    pub fn from_gray8(bytes: &[u8]) -> Result<Self> {
        let px: Vec<f32> = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::from_pixels(&px)
    }

    /// Plain (P2) graymap text.
    pub fn to_pgm_ascii(&self) -> String {
        let mut s = format!("P2\n{GLYPH_SIZE} {GLYPH_SIZE}\n255\n");
        for row in self.to_gray8().chunks(GLYPH_SIZE) {
            let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Binary (P5) graymap bytes.
    pub fn to_pgm_binary(&self) -> Vec<u8> {
        let mut out = format!("P5\n{GLYPH_SIZE} {GLYPH_SIZE}\n255\n").into_bytes();
        out.extend(self.to_gray8());
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_pgm_ascii().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_pgm(&bytes).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    /// Parses a 36×36 P2 or P5 graymap with maxval 255.
    pub fn parse_pgm(bytes: &[u8]) -> Result<Self> {
        let (header, body) = pgm_header(bytes)?;
        if header.width != GLYPH_SIZE || header.height != GLYPH_SIZE || header.maxval != 255 {
            return Err(Error::data(format!(
                "expected {GLYPH_SIZE}x{GLYPH_SIZE} maxval 255, got {}x{} maxval {}",
                header.width, header.height, header.maxval
            )));
        }
        let gray: Vec<u8> = if header.binary {
            body.get(..GLYPH_PIXELS)
                .ok_or_else(|| Error::data("truncated P5 raster"))?
                .to_vec()
        } else {
            let text = std::str::from_utf8(body).map_err(|_| Error::data("non-ascii P2 raster"))?;
            let vals: Result<Vec<u8>> = text
                .split_ascii_whitespace()
                .map(|t| {
                    t.parse::<u8>()
                        .map_err(|_| Error::data(format!("bad sample {t:?}")))
                })
                .collect();
            let vals = vals?;
            if vals.len() != GLYPH_PIXELS {
                return Err(Error::data(format!(
                    "expected {GLYPH_PIXELS} samples, got {}",
                    vals.len()
                )));
            }
            vals
        };
        Self::from_gray8(&gray)
    }
}

struct PgmHeader {
    binary: bool,
    width: usize,
    height: usize,
    maxval: usize,
}

fn pgm_header(bytes: &[u8]) -> Result<(PgmHeader, &[u8])> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::data("truncated PGM header"));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..i])
                .unwrap_or("")
                .to_string(),
        );
    }
    // exactly one whitespace byte separates the header from a P5 raster
    i += 1;
    let binary = match fields[0].as_str() {
        "P5" => true,
        "P2" => false,
        m => return Err(Error::data(format!("unsupported PGM magic {m:?}"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::data(format!("bad PGM header field {s:?}")))
    };
    Ok((
        PgmHeader {
            binary,
            width: num(&fields[1])?,
            height: num(&fields[2])?,
            maxval: num(&fields[3])?,
        },
        bytes.get(i..).unwrap_or(&[]),
    ))
}

/// Keeps one half of the glyph and sets the rest to background.
pub fn mask_half(img: &GlyphImage, keep: Half) -> GlyphImage {
    let mut out = GlyphImage::blank();
    for row in 0..GLYPH_SIZE {
        for col in 0..GLYPH_SIZE {
            if keep.contains(row, col) {
                out.pixels[row * GLYPH_SIZE + col] = img.get(row, col);
            }
        }
    }
    out
}
