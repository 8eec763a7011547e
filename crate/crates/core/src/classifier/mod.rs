//! Sequence classification: per-character embeddings, a GRU encoder and a
//! softmax head, plus training and checkpoints.

mod checkpoint;
mod gru;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::CHECKPOINT_MAGIC;
pub use gru::{GruParams, HeadParams};

use crate::corpus::{FrequencyTable, Instance};
use crate::embed::{CharVocab, LookupEmbedder, VisualCnn, CNN_EMBED_DIM, PAD_ID};
use crate::error::{Error, Result};
use crate::fusion::EarlyFusionParams;
use crate::glyph::{GlyphImage, GlyphProvider};
use crate::prob::ProbDist;
use crate::rng::{self, stream};
use crate::scalar::Scalar;
use crate::tensor::{softmax_row, AdamState, Graph, NodeId, ParamStore};

// Init salts: one independent stream per component.
const SALT_LOOKUP: u64 = 0;
const SALT_VISUAL: u64 = 1;
const SALT_GRU: u64 = 2;
const SALT_HEAD: u64 = 3;
const SALT_FUSION: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Lookup,
    Visual,
    #[serde(alias = "early-fusion", alias = "early_fusion")]
    Early,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lookup => "lookup",
            ModelKind::Visual => "visual",
            ModelKind::Early => "early",
        }
    }

    pub fn uses_lookup(self) -> bool {
        matches!(self, ModelKind::Lookup | ModelKind::Early)
    }

    pub fn uses_glyphs(self) -> bool {
        matches!(self, ModelKind::Visual | ModelKind::Early)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lookup" => Ok(ModelKind::Lookup),
            "visual" => Ok(ModelKind::Visual),
            "early" | "early-fusion" | "early_fusion" => Ok(ModelKind::Early),
            _ => Err(Error::config(format!(
                "unknown model kind {s:?} (lookup, visual, early)"
            ))),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub batch_size: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Lookup,
            batch_size: 400,
            seq_len: 10,
            embed_dim: 128,
            hidden_dim: 128,
            learning_rate: 1e-3,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.model.uses_glyphs() && self.embed_dim != CNN_EMBED_DIM {
            return Err(Error::config(format!(
                "{} model needs embed_dim = {CNN_EMBED_DIM}, got {}",
                self.model.name(),
                self.embed_dim
            )));
        }
        Ok(())
    }
}

/// First `len` characters of `title`, right-padded with `None` (PAD).
pub fn pad_or_truncate(title: &[char], len: usize) -> Vec<Option<char>> {
    let mut out: Vec<Option<char>> = title.iter().take(len).map(|&c| Some(c)).collect();
    out.resize(len, None);
    out
}

/// Loss and accuracy over one pass through the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub train_acc: f64,
    /// Loss of every minibatch, in order.
    #[serde(skip)]
    pub step_losses: Vec<f64>,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
    pub valid_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub epochs: Vec<EpochReport>,
    /// Epoch whose parameters were kept, when a validation split was given.
    pub best_epoch: Option<usize>,
}

/// A complete classifier of one [`ModelKind`].
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: TrainConfig,
    categories: Vec<String>,
    vocab: CharVocab,
    glyphs: Option<Arc<GlyphProvider>>,
    store: ParamStore<T>,
    lookup: Option<LookupEmbedder>,
    visual: Option<VisualCnn>,
    fusion: Option<EarlyFusionParams>,
    gru: GruParams,
    head: HeadParams,
    frequencies: Option<FrequencyTable>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized model; glyph-based kinds need a provider.
    pub fn new(
        config: TrainConfig,
        categories: Vec<String>,
        vocab: CharVocab,
        glyphs: Option<Arc<GlyphProvider>>,
    ) -> Result<Self> {
        config.validate()?;
        let kind = config.model;
        if kind.uses_glyphs() && glyphs.is_none() {
            return Err(Error::config(format!(
                "{} model needs a glyph source",
                kind.name()
            )));
        }
        let seed = config.seed;
        let init = |salt| rng::rng_for(seed, stream::INIT, salt);
        let mut store = ParamStore::new();
        let lookup = if kind.uses_lookup() {
            Some(LookupEmbedder::init(
                &mut store,
                &mut init(SALT_LOOKUP),
                vocab.len(),
                config.embed_dim,
            )?)
        } else {
            None
        };
        let visual = if kind.uses_glyphs() {
            Some(VisualCnn::init(
                &mut store,
                &mut init(SALT_VISUAL),
                config.embed_dim,
            )?)
        } else {
            None
        };
        let fusion = if kind == ModelKind::Early {
            Some(EarlyFusionParams::init(
                &mut store,
                &mut init(SALT_FUSION),
                config.embed_dim,
            )?)
        } else {
            None
        };
        let gru = GruParams::init(
            &mut store,
            &mut init(SALT_GRU),
            config.embed_dim,
            config.hidden_dim,
        )?;
        let head = HeadParams::init(
            &mut store,
            &mut init(SALT_HEAD),
            config.hidden_dim,
            categories.len(),
        )?;
        Ok(Self {
            config,
            categories,
            vocab,
            glyphs: if kind.uses_glyphs() { glyphs } else { None },
            store,
            lookup,
            visual,
            fusion,
            gru,
            head,
            frequencies: None,
        })
    }

    /// Model whose vocabulary and frequency table come from `train`.
    pub fn for_corpus(
        config: TrainConfig,
        categories: Vec<String>,
        train: &[Instance],
        glyphs: Option<Arc<GlyphProvider>>,
    ) -> Result<Self> {
        let vocab = CharVocab::from_titles(train.iter().map(|i| i.title.as_slice()));
        let mut m = Self::new(config, categories, vocab, glyphs)?;
        if !train.is_empty() {
            m.frequencies = Some(crate::corpus::char_frequency_table(train)?);
        }
        Ok(m)
    }

    pub fn kind(&self) -> ModelKind {
        self.config.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    pub fn glyphs(&self) -> Option<&Arc<GlyphProvider>> {
        self.glyphs.as_ref()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn lookup(&self) -> Option<&LookupEmbedder> {
        self.lookup.as_ref()
    }

    pub fn visual(&self) -> Option<&VisualCnn> {
        self.visual.as_ref()
    }

    pub fn fusion(&self) -> Option<&EarlyFusionParams> {
        self.fusion.as_ref()
    }

    pub fn gru(&self) -> &GruParams {
        &self.gru
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    /// Training-split character counts, if the model was built from a corpus.
    pub fn frequencies(&self) -> Option<&FrequencyTable> {
        self.frequencies.as_ref()
    }

    pub fn set_frequencies(&mut self, table: Option<FrequencyTable>) {
        self.frequencies = table;
    }

    /// Copies every parameter whose name and shape also exist in `other`.
    /// Returns how many were copied.
    pub fn warm_start_from(&mut self, other: &Model<T>) -> Result<usize> {
        if other.vocab != self.vocab && other.lookup.is_some() && self.lookup.is_some() {
            return Err(Error::config("warm start: vocabularies differ"));
        }
        let mut copied = 0;
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = self.store.name(id).to_string();
            if name.starts_with("gru.") || name.starts_with("head.") {
                continue;
            }
            if let Some(src) = other.store.find(&name) {
                let v = other.store.value(src);
                if v.shape() == self.store.value(id).shape() {
                    *self.store.value_mut(id) = v.clone();
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }

    fn glyph_provider(&self) -> Result<&GlyphProvider> {
        self.glyphs.as_deref().ok_or_else(|| {
            Error::contract(format!("{} model has no glyph source", self.kind().name()))
        })
    }

    /// CNN embeddings for `images` as rows of an `N×d_c` node.
    pub fn embed_images(&self, g: &mut Graph<T>, images: &[&GlyphImage]) -> Result<NodeId> {
        let cnn = self.visual.as_ref().ok_or_else(|| {
            Error::contract(format!("{} model has no glyph encoder", self.kind().name()))
        })?;
        let input = VisualCnn::image_batch(g, images)?;
        cnn.forward(g, &self.store, input)
    }

    /// One `B×d_c` node per sequence position.
    fn step_inputs(&self, g: &mut Graph<T>, titles: &[&[char]]) -> Result<Vec<NodeId>> {
        let len = self.config.seq_len;
        let tokens: Vec<Vec<Option<char>>> =
            titles.iter().map(|t| pad_or_truncate(t, len)).collect();
        let lookup_steps = match &self.lookup {
            Some(lk) => {
                let mut steps = Vec::with_capacity(len);
                for t in 0..len {
                    let ids: Vec<usize> = tokens
                        .iter()
                        .map(|tok| tok[t].map_or(PAD_ID, |c| self.vocab.id(c)))
                        .collect();
                    steps.push(lk.embed_ids(g, &self.store, &ids)?);
                }
                Some(steps)
            }
            None => None,
        };
        let visual_steps = if self.visual.is_some() {
            // Each distinct glyph goes through the CNN once; slot 0 is the
            // blank image standing in for PAD.
            let provider = self.glyph_provider()?;
            let mut images = vec![GlyphImage::blank()];
            let mut slot: HashMap<char, usize> = HashMap::new();
            let mut index = vec![vec![0usize; titles.len()]; len];
            for (b, tok) in tokens.iter().enumerate() {
                for (t, c) in tok.iter().enumerate() {
                    if let Some(c) = *c {
                        index[t][b] = *slot.entry(c).or_insert_with(|| {
                            images.push(provider.render_glyph(c));
                            images.len() - 1
                        });
                    }
                }
            }
            let refs: Vec<&GlyphImage> = images.iter().collect();
            let table = self.embed_images(g, &refs)?;
            let mut steps = Vec::with_capacity(len);
            for ids in &index {
                steps.push(g.gather_rows(table, ids)?);
            }
            Some(steps)
        } else {
            None
        };
        match (lookup_steps, visual_steps, &self.fusion) {
            (Some(l), Some(v), Some(f)) => l
                .into_iter()
                .zip(v)
                .map(|(l, v)| f.early_fuse_embed(g, &self.store, l, v))
                .collect(),
            (Some(l), None, None) => Ok(l),
            (None, Some(v), None) => Ok(v),
            _ => Err(Error::contract("inconsistent model components")),
        }
    }

    /// Category logits for a batch of titles as a `B×L` node.
    pub fn forward(&self, g: &mut Graph<T>, titles: &[&[char]]) -> Result<NodeId> {
        if titles.is_empty() {
            return Err(Error::contract("forward on an empty batch"));
        }
        let steps = self.step_inputs(g, titles)?;
        let e = self.gru.encode_sequence(g, &self.store, &steps)?;
        self.head.logits(g, &self.store, e)
    }

    /// Mean cross-entropy of a batch; returns the loss and logits nodes.
    pub fn batch_loss(&self, g: &mut Graph<T>, batch: &[&Instance]) -> Result<(NodeId, NodeId)> {
        let titles: Vec<&[char]> = batch.iter().map(|i| i.title.as_slice()).collect();
        let labels: Vec<usize> = batch.iter().map(|i| i.label).collect();
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.categories.len()) {
            return Err(Error::data(format!(
                "label {bad} out of range for {} categories",
                self.categories.len()
            )));
        }
        let logits = self.forward(g, &titles)?;
        let loss = g.softmax_cross_entropy(logits, &labels)?;
        Ok((loss, logits))
    }

    fn distributions(&self, g: &Graph<T>, logits: NodeId) -> Vec<ProbDist> {
        let l = self.categories.len();
        g.value(logits)
            .data()
            .chunks(l)
            .map(|row| {
                let row: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
                ProbDist::new_unchecked(softmax_row(&row))
            })
            .collect()
    }

    /// Class distribution for one title.
    pub fn predict(&self, title: &[char]) -> Result<ProbDist> {
        Ok(self.predict_batch(&[title])?.remove(0))
    }

    /// Class distributions for many titles, evaluated `batch_size` at a time.
    pub fn predict_batch(&self, titles: &[&[char]]) -> Result<Vec<ProbDist>> {
        let mut out = Vec::with_capacity(titles.len());
        for chunk in titles.chunks(self.config.batch_size) {
            let mut g = Graph::new();
            let logits = self.forward(&mut g, chunk)?;
            out.extend(self.distributions(&g, logits));
        }
        Ok(out)
    }

    /// Fraction of `data` whose argmax prediction equals the label.
    pub fn accuracy(&self, data: &[Instance]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::data("accuracy over an empty set"));
        }
        let titles: Vec<&[char]> = data.iter().map(|i| i.title.as_slice()).collect();
        let preds = self.predict_batch(&titles)?;
        let correct = preds
            .iter()
            .zip(data)
            .filter(|(p, i)| p.argmax() == i.label)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// One shuffled pass of minibatch Adam over `data`.
    ///
    /// The shuffle depends only on the seed and `epoch`. Each step's loss
    /// is averaged over that batch's actual size, and the epoch mean weights
    /// batches by size.
    pub fn train_epoch(
        &mut self,
        adam: &mut AdamState<T>,
        data: &[Instance],
        epoch: usize,
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::config("training on an empty corpus"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::rng_for(
            self.config.seed,
            stream::SHUFFLE,
            epoch as u64,
        ));
        let mut weighted = 0.0;
        let mut correct = 0usize;
        let mut step_losses = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &data[i]).collect();
            let mut g = Graph::new();
            let (loss, logits) = self.batch_loss(&mut g, &batch)?;
            let j = g.value(loss).data()[0].as_f64();
            correct += self
                .distributions(&g, logits)
                .iter()
                .zip(&batch)
                .filter(|(p, i)| p.argmax() == i.label)
                .count();
            self.store.zero_grads();
            g.backward(loss, &mut self.store)?;
            adam.step(&mut self.store);
            weighted += j * batch.len() as f64;
            step_losses.push(j);
        }
        Ok(EpochStats {
            mean_loss: weighted / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
            step_losses,
        })
    }

    /// Trains for `config.epochs` epochs, keeping the parameters with the
    /// best validation accuracy (earliest on ties) when `valid` is nonempty.
    pub fn fit(
        &mut self,
        train: &[Instance],
        valid: &[Instance],
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<FitReport> {
        if train.is_empty() {
            return Err(Error::config("training on an empty corpus"));
        }
        if self.frequencies.is_none() {
            self.frequencies = Some(crate::corpus::char_frequency_table(train)?);
        }
        let mut adam = AdamState::new(T::of(self.config.learning_rate));
        let mut report = FitReport::default();
        let mut best: Option<(f64, ParamStore<T>)> = None;
        for epoch in 1..=self.config.epochs {
            let stats = self.train_epoch(&mut adam, train, epoch)?;
            let valid_acc = if valid.is_empty() {
                None
            } else {
                Some(self.accuracy(valid)?)
            };
            let r = EpochReport {
                epoch,
                mean_loss: stats.mean_loss,
                train_acc: stats.train_acc,
                valid_acc,
            };
            on_epoch(&r);
            report.epochs.push(r);
            if let Some(acc) = valid_acc {
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, self.store.clone()));
                    report.best_epoch = Some(epoch);
                }
            }
        }
        if let Some((_, store)) = best {
            self.store = store;
        }
        Ok(report)
    }

    /// Embedding of each character, as the model's sequence input sees it.
    pub fn char_embeddings(&self, chars: &[char]) -> Result<Vec<Vec<f64>>> {
        if chars.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let lookup = match &self.lookup {
            Some(lk) => {
                let ids: Vec<usize> = chars.iter().map(|&c| self.vocab.id(c)).collect();
                Some(lk.embed_ids(&mut g, &self.store, &ids)?)
            }
            None => None,
        };
        let visual = match &self.visual {
            Some(_) => {
                let provider = self.glyph_provider()?;
                let images: Vec<GlyphImage> =
                    chars.iter().map(|&c| provider.render_glyph(c)).collect();
                let refs: Vec<&GlyphImage> = images.iter().collect();
                Some(self.embed_images(&mut g, &refs)?)
            }
            None => None,
        };
        let node = match (lookup, visual, &self.fusion) {
            (Some(l), Some(v), Some(f)) => f.early_fuse_embed(&mut g, &self.store, l, v)?,
            (Some(l), None, _) => l,
            (None, Some(v), _) => v,
            _ => return Err(Error::contract("inconsistent model components")),
        };
        let d = self.config.embed_dim;
        Ok(g.value(node)
            .data()
            .chunks(d)
            .map(|r| r.iter().map(|x| x.as_f64()).collect())
            .collect())
    }
}
