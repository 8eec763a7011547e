//! Checkpoint files: a magic line, one line of JSON header, then every
//! parameter as little-endian `f32` in header order.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Model, ModelKind, TrainConfig};
use crate::corpus::FrequencyTable;
use crate::embed::CharVocab;
use crate::error::{Error, Result};
use crate::glyph::{GlyphConfig, GlyphProvider};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "glyphemb-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    kind: ModelKind,
    categories: Vec<String>,
    vocab: CharVocab,
    config: TrainConfig,
    glyphs: Option<GlyphConfig>,
    frequencies: Option<FrequencyTable>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Scalar> Model<T> {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.store;
        let header = Header {
            version: FORMAT_VERSION,
            kind: self.kind(),
            categories: self.categories.clone(),
            vocab: self.vocab.clone(),
            config: self.config.clone(),
            glyphs: self.glyphs.as_ref().map(|g| g.config().clone()),
            frequencies: self.frequencies.clone(),
            tensors: store
                .ids()
                .map(|id| TensorEntry {
                    name: store.name(id).to_string(),
                    shape: store.value(id).shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&header).map_err(|e| bad(e.to_string()))?;
        let mut out = format!("{CHECKPOINT_MAGIC} v{FORMAT_VERSION}\n{json}\n").into_bytes();
        out.reserve(store.numel() * 4);
        for id in store.ids() {
            for &x in store.value(id).data() {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_checkpoint_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint, rebuilding the glyph source from its header.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_checkpoint_bytes_with(bytes, None)
    }

    /// Like [`from_checkpoint_bytes`](Self::from_checkpoint_bytes), but
    /// uses `glyphs` instead of the header's glyph source when given.
    pub fn from_checkpoint_bytes_with(
        bytes: &[u8],
        glyphs: Option<Arc<GlyphProvider>>,
    ) -> Result<Self> {
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().unwrap_or_default();
        let expected = format!("{CHECKPOINT_MAGIC} v{FORMAT_VERSION}");
        if magic != expected.as_bytes() {
            return Err(bad(format!(
                "not a v{FORMAT_VERSION} checkpoint (bad magic line)"
            )));
        }
        let json = lines.next().ok_or_else(|| bad("missing header"))?;
        let blob = lines.next().ok_or_else(|| bad("missing parameter data"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        if header.kind != header.config.model {
            return Err(bad("header kind disagrees with its config"));
        }
        let glyphs = match (glyphs, &header.glyphs) {
            (Some(g), _) => Some(g),
            (None, Some(cfg)) => Some(Arc::new(GlyphProvider::new(cfg)?)),
            (None, None) => None,
        };
        let mut model = Model::new(header.config, header.categories, header.vocab, glyphs)?;
        model.frequencies = header.frequencies;
        if header.tensors.len() != model.store.len() {
            return Err(bad(format!(
                "{} tensors stored, model has {}",
                header.tensors.len(),
                model.store.len()
            )));
        }
        let mut offset = 0usize;
        for entry in &header.tensors {
            let id = model
                .store
                .find(&entry.name)
                .ok_or_else(|| bad(format!("unexpected tensor {:?}", entry.name)))?;
            if model.store.value(id).shape() != entry.shape.as_slice() {
                return Err(bad(format!(
                    "tensor {:?}: stored shape {:?}, expected {:?}",
                    entry.name,
                    entry.shape,
                    model.store.value(id).shape()
                )));
            }
            let n: usize = entry.shape.iter().product();
            let raw = blob
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(format!("parameter data truncated in {:?}", entry.name)))?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            *model.store.value_mut(id) = Tensor::new(entry.shape.clone(), data)?;
        }
        if offset != blob.len() {
            return Err(bad(format!("{} trailing bytes", blob.len() - offset)));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn load_with_glyphs(path: &Path, glyphs: Arc<GlyphProvider>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes_with(&bytes, Some(glyphs))
    }
}
