//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use glyphemb::classifier::TrainConfig;
use glyphemb::glyph::GlyphConfig;
use glyphemb::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    #[default]
    None,
    Late,
    Fallback,
}

/// One training/evaluation run. Relative paths are taken from the config
/// file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory written by `glyphemb dataset` (train/valid/test TSVs and
    /// `categories.txt`).
    pub corpus: PathBuf,
    /// Where checkpoints and logs go.
    pub out: PathBuf,
    /// Overrides `categories.txt` when non-empty.
    pub categories: Vec<String>,
    pub glyphs: GlyphConfig,
    pub fusion: FusionKind,
    pub threshold: f64,
    /// Checkpoints whose lookup table / CNN weights seed the model.
    pub warm_start: Vec<PathBuf>,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out);
        self.warm_start.iter_mut().for_each(fix);
        match &mut self.glyphs {
            GlyphConfig::Font { path, .. } | GlyphConfig::PgmDir { path } => fix(path),
            GlyphConfig::Procedural { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.corpus.as_os_str().is_empty() {
            return Err(Error::config("`corpus` is required"));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::config("`out` is required"));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::config(format!(
                "threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}
