use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use ab_glyph::{Font, FontVec, GlyphId, PxScale};
use serde::{Deserialize, Serialize};

use super::fixture::FixtureSet;
use super::image::{GlyphImage, GLYPH_SIZE};
use crate::error::{Error, Result};

/// Where glyph images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GlyphConfig {
    Font {
        path: PathBuf,
        #[serde(default = "default_pixel_size")]
        pixel_size: f32,
    },
    Procedural {
        fixture: String,
    },
    /// Pre-rendered 36×36 PGM files named `U+XXXX.pgm`.
    PgmDir {
        path: PathBuf,
    },
}

fn default_pixel_size() -> f32 {
    GLYPH_SIZE as f32
}

impl Default for GlyphConfig {
    fn default() -> Self {
        GlyphConfig::Procedural {
            fixture: "radicals".into(),
        }
    }
}

enum Source {
    Font { font: FontVec, pixel_size: f32 },
    Procedural(FixtureSet),
    Table(HashMap<char, GlyphImage>),
}

/// Renders codepoints to glyph images, caching each result.
///
/// Safe to share across threads; the cache is behind a lock.
pub struct GlyphProvider {
    config: GlyphConfig,
    source: Source,
    fallback: GlyphImage,
    cache: RwLock<HashMap<char, GlyphImage>>,
}

impl std::fmt::Debug for GlyphProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlyphProvider")
            .field("config", &self.config)
            .finish()
    }
}

/// Hollow box drawn for codepoints the source cannot render.
pub fn tofu() -> GlyphImage {
    let mut img = GlyphImage::blank();
    for i in 6..30 {
        for j in [6, 29] {
            img.set(i, j, 1.0);
            img.set(j, i, 1.0);
        }
    }
    img
}

/// File name used for `c` in a PGM glyph directory, e.g. `U+4E2D.pgm`.
pub fn pgm_file_name(c: char) -> String {
    format!("U+{:04X}.pgm", c as u32)
}

impl GlyphProvider {
    pub fn new(config: &GlyphConfig) -> Result<Self> {
        match config {
            GlyphConfig::Font { path, pixel_size } => Self::from_font(path, *pixel_size),
            GlyphConfig::Procedural { fixture } => Self::procedural(fixture),
            GlyphConfig::PgmDir { path } => Self::from_pgm_dir(path),
        }
    }

    pub fn from_font(path: &Path, pixel_size: f32) -> Result<Self> {
        let font_err = |message: String| Error::Font {
            path: path.to_path_buf(),
            message,
        };
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(font_err(format!("invalid pixel size {pixel_size}")));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let font = FontVec::try_from_vec(bytes).map_err(|e| font_err(e.to_string()))?;
        Ok(Self {
            config: GlyphConfig::Font {
                path: path.to_path_buf(),
                pixel_size,
            },
            source: Source::Font { font, pixel_size },
            fallback: tofu(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn procedural(fixture: &str) -> Result<Self> {
        let set = FixtureSet::from_id(fixture)
            .ok_or_else(|| Error::config(format!("unknown glyph fixture set {fixture:?}")))?;
        Ok(Self {
            config: GlyphConfig::Procedural {
                fixture: fixture.to_string(),
            },
            source: Source::Procedural(set),
            fallback: tofu(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Loads every `U+XXXX.pgm` in `dir`; other files are ignored.
    pub fn from_pgm_dir(dir: &Path) -> Result<Self> {
        let mut table = HashMap::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let Some(c) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("U+")?.strip_suffix(".pgm"))
                .and_then(|hex| u32::from_str_radix(hex, 16).ok())
                .and_then(char::from_u32)
            else {
                continue;
            };
            table.insert(c, GlyphImage::read_pgm(&path)?);
        }
        Ok(Self {
            config: GlyphConfig::PgmDir {
                path: dir.to_path_buf(),
            },
            source: Source::Table(table),
            fallback: tofu(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_fallback(mut self, fallback: GlyphImage) -> Self {
        self.fallback = fallback;
        self.cache.get_mut().expect("cache lock").clear();
        self
    }

    pub fn config(&self) -> &GlyphConfig {
        &self.config
    }

    pub fn fallback(&self) -> &GlyphImage {
        &self.fallback
    }

    /// Image for `c`, or the fallback when the source has no glyph for it.
    pub fn render_glyph(&self, c: char) -> GlyphImage {
        if let Some(img) = self.cache.read().expect("cache lock").get(&c) {
            return img.clone();
        }
        let img = match &self.source {
            Source::Font { font, pixel_size } => rasterize(font, *pixel_size, c),
            Source::Procedural(set) => set.render(c),
            Source::Table(table) => table.get(&c).cloned(),
        }
        .unwrap_or_else(|| self.fallback.clone());
        self.cache
            .write()
            .expect("cache lock")
            .entry(c)
            .or_insert(img)
            .clone()
    }

    pub fn render_title(&self, chars: &[char]) -> Vec<GlyphImage> {
        chars.iter().map(|&c| self.render_glyph(c)).collect()
    }
}

/// Rasterizes `c` at `pixel_size`, shrinking to fit the grid if needed,
/// centered and normalized so the darkest pixel is 1.
fn rasterize(font: &FontVec, pixel_size: f32, c: char) -> Option<GlyphImage> {
    let id = font.glyph_id(c);
    if id == GlyphId(0) {
        return None;
    }
    let limit = GLYPH_SIZE as f32;
    let outline_at = |size: f32| font.outline_glyph(id.with_scale(PxScale::from(size)));
    let Some(mut outlined) = outline_at(pixel_size) else {
        // mapped glyph without contours, e.g. a space
        return Some(GlyphImage::blank());
    };
    let b = outlined.px_bounds();
    let extent = b.width().max(b.height());
    if extent > limit {
        let shrunk = pixel_size * (limit - 0.5) / extent;
        outlined = outline_at(shrunk)?;
    }
    let b = outlined.px_bounds();
    let off_x = ((limit - b.width()) / 2.0).floor().max(0.0) as i64;
    let off_y = ((limit - b.height()) / 2.0).floor().max(0.0) as i64;
    let mut px = vec![0f32; GLYPH_SIZE * GLYPH_SIZE];
    outlined.draw(|x, y, cov| {
        let (col, row) = (x as i64 + off_x, y as i64 + off_y);
        if (0..GLYPH_SIZE as i64).contains(&col) && (0..GLYPH_SIZE as i64).contains(&row) {
            let cell = &mut px[row as usize * GLYPH_SIZE + col as usize];
            *cell = cell.max(cov);
        }
    });
    let max = px.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        px.iter_mut().for_each(|p| *p /= max);
    }
    GlyphImage::from_pixels(&px).ok()
}
