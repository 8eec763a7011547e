//! Per-character embeddings: a trainable lookup table and the glyph CNN.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyph::{GlyphImage, GLYPH_PIXELS, GLYPH_SIZE};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Embedding width the CNN head is built for.
pub const CNN_EMBED_DIM: usize = 128;
/// Channels in every convolution layer.
pub const CNN_CHANNELS: usize = 32;
/// Flattened width after the last convolution: 32 × 5 × 5.
pub const CNN_FLAT: usize = 800;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Character vocabulary with reserved PAD (0) and UNK (1) entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<char>", into = "Vec<char>")]
pub struct CharVocab {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl From<Vec<char>> for CharVocab {
    fn from(chars: Vec<char>) -> Self {
        Self::new(chars)
    }
}

impl From<CharVocab> for Vec<char> {
    fn from(v: CharVocab) -> Self {
        v.chars
    }
}

impl CharVocab {
    /// Vocabulary over the distinct characters of `chars`, in codepoint order.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = chars.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    pub fn from_titles<'a>(titles: impl IntoIterator<Item = &'a [char]>) -> Self {
        Self::new(titles.into_iter().flatten().copied())
    }

    /// Total rows including PAD and UNK.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Known characters in id order (ids start at 2).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Id of `c`, or UNK for characters outside the vocabulary.
    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_ID)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(2).and_then(|i| self.chars.get(i)).copied()
    }
}

fn uniform_tensor<T: Scalar>(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| T::of(dist.sample(rng))).collect(),
    )
    .expect("shape is nonempty")
}

/// Weight with Glorot-uniform bounds `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<T: Scalar>(
    rng: &mut Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    uniform_tensor(rng, shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// The lookup matrix `|C| × d_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LookupEmbedder {
    pub table: ParamId,
    pub dim: usize,
}

impl LookupEmbedder {
    /// Rows uniform in `±1/sqrt(d_c)`; PAD and UNK rows are ordinary rows.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        vocab_size: usize,
        dim: usize,
    ) -> Result<Self> {
        if vocab_size < 2 || dim == 0 {
            return Err(Error::config(format!(
                "lookup table needs >= 2 rows and a positive width, got {vocab_size}x{dim}"
            )));
        }
        let t = uniform_tensor(rng, &[vocab_size, dim], 1.0 / (dim as f64).sqrt());
        Ok(Self {
            table: store.add("lookup.table", t),
            dim,
        })
    }

    pub fn rows<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.table).shape()[0]
    }

    /// Rows for `ids` as an `len(ids) × d_c` node; gradient reaches only those rows.
    pub fn embed_ids<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        ids: &[usize],
    ) -> Result<NodeId> {
        let table = g.param(store, self.table);
        g.gather_rows(table, ids)
    }

    /// Single-character embedding as a `d_c` vector.
    pub fn lookup_embed<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        id: usize,
    ) -> Result<NodeId> {
        let rows = self.embed_ids(g, store, &[id])?;
        g.reshape(rows, &[self.dim])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

/// The three-convolution glyph encoder producing 128-wide embeddings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualCnn {
    conv: [Layer; 3],
    fc1: Layer,
    fc2: Layer,
}

/// Spatial layout after each stage of [`VisualCnn::forward`], for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeTrace {
    pub stages: Vec<(&'static str, Vec<usize>)>,
}

impl ShapeTrace {
    fn record(&mut self, name: &'static str, shape: &[usize]) {
        self.stages.push((name, shape.to_vec()));
    }

    /// Spatial side length after each conv and pool stage.
    pub fn spatial_extents(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter(|(n, _)| n.starts_with("conv") || n.starts_with("pool"))
            .map(|(_, s)| s[s.len() - 1])
            .collect()
    }

    pub fn flatten_width(&self) -> Option<usize> {
        self.stages
            .iter()
            .find(|(n, _)| *n == "flatten")
            .map(|(_, s)| s[s.len() - 1])
    }
}

impl VisualCnn {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng, dim: usize) -> Result<Self> {
        if dim != CNN_EMBED_DIM {
            return Err(Error::config(format!(
                "the glyph CNN emits {CNN_EMBED_DIM}-wide embeddings; d_c = {dim} is not supported"
            )));
        }
        let mut conv_layer = |store: &mut ParamStore<T>, i: usize, cin: usize| Layer {
            weight: store.add(
                format!("cnn.conv{i}.weight"),
                glorot(rng, &[CNN_CHANNELS, cin, 3, 3], cin * 9, CNN_CHANNELS * 9),
            ),
            bias: store.add(format!("cnn.conv{i}.bias"), Tensor::zeros([CNN_CHANNELS])),
        };
        let conv = [
            conv_layer(store, 1, 1),
            conv_layer(store, 2, CNN_CHANNELS),
            conv_layer(store, 3, CNN_CHANNELS),
        ];
        let fc1 = Layer {
            weight: store.add(
                "cnn.fc1.weight",
                glorot(rng, &[dim, CNN_FLAT], CNN_FLAT, dim),
            ),
            bias: store.add("cnn.fc1.bias", Tensor::zeros([dim])),
        };
        let fc2 = Layer {
            weight: store.add("cnn.fc2.weight", glorot(rng, &[dim, dim], dim, dim)),
            bias: store.add("cnn.fc2.bias", Tensor::zeros([dim])),
        };
        Ok(Self { conv, fc1, fc2 })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.conv.iter().flat_map(|l| [l.weight, l.bias]).collect();
        v.extend([
            self.fc1.weight,
            self.fc1.bias,
            self.fc2.weight,
            self.fc2.bias,
        ]);
        v
    }

    /// Stacks images into an `N×1×36×36` graph input.
    pub fn image_batch<T: Scalar>(g: &mut Graph<T>, images: &[&GlyphImage]) -> Result<NodeId> {
        if images.is_empty() {
            return Err(Error::contract("visual embedding of zero images"));
        }
        let mut data = Vec::with_capacity(images.len() * GLYPH_PIXELS);
        for img in images {
            data.extend(img.pixels().iter().map(|&p| T::of(p as f64)));
        }
        Ok(g.constant(Tensor::new(
            [images.len(), 1, GLYPH_SIZE, GLYPH_SIZE],
            data,
        )?))
    }

    /// Embeddings for a batch of `N×1×36×36` images, as an `N×128` node.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        images: NodeId,
    ) -> Result<NodeId> {
        self.forward_traced(g, store, images, &mut ShapeTrace::default())
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        images: NodeId,
        trace: &mut ShapeTrace,
    ) -> Result<NodeId> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1..] != [1, GLYPH_SIZE, GLYPH_SIZE] {
            return Err(Error::contract(format!(
                "glyph CNN expects N×1×{GLYPH_SIZE}×{GLYPH_SIZE} input, got {s:?}"
            )));
        }
        let n = s[0];
        trace.record("input", &s);
        let mut x = images;
        for (i, layer) in self.conv.iter().enumerate() {
            let (w, b) = (g.param(store, layer.weight), g.param(store, layer.bias));
            x = g.conv2d(x, w, b)?;
            trace.record(["conv1", "conv2", "conv3"][i], g.shape(x));
            x = g.relu(x);
            if i < 2 {
                x = g.maxpool2d(x)?;
                trace.record(["pool1", "pool2"][i], g.shape(x));
            }
        }
        let flat: usize = g.shape(x)[1..].iter().product();
        if flat != CNN_FLAT {
            return Err(Error::contract(format!(
                "flatten width {flat}, expected {CNN_FLAT}"
            )));
        }
        x = g.reshape(x, &[n, flat])?;
        trace.record("flatten", g.shape(x));
        for (name, layer) in [("fc1", self.fc1), ("fc2", self.fc2)] {
            let (w, b) = (g.param(store, layer.weight), g.param(store, layer.bias));
            x = g.affine(x, w, Some(b))?;
            x = g.relu(x);
            trace.record(name, g.shape(x));
        }
        Ok(x)
    }

    /// Single-image embedding as a 128-wide vector.
    pub fn visual_embed<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        img: &GlyphImage,
    ) -> Result<NodeId> {
        let input = Self::image_batch(g, &[img])?;
        let out = self.forward(g, store, input)?;
        g.reshape(out, &[CNN_EMBED_DIM])
    }
}

/// Fresh lookup and CNN parameters for `seed`, in one store.
pub fn init_params<T: Scalar>(
    seed: u64,
    vocab_size: usize,
    dim: usize,
) -> Result<(ParamStore<T>, LookupEmbedder, VisualCnn)> {
    let mut store = ParamStore::new();
    let lookup = LookupEmbedder::init(
        &mut store,
        &mut rng::rng_for(seed, rng::stream::INIT, 0),
        vocab_size,
        dim,
    )?;
    let visual = VisualCnn::init(
        &mut store,
        &mut rng::rng_for(seed, rng::stream::INIT, 1),
        dim,
    )?;
    Ok((store, lookup, visual))
}
