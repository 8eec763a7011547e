//! Evaluation records, rarity-stratified accuracy, occlusion heatmaps and
//! nearest-neighbour inspection of character embeddings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::Model;
use crate::corpus::{FrequencyTable, Instance};
use crate::error::{Error, Result};
use crate::fusion::{avg_char_frequency, Route};
use crate::glyph::{mask_half, GlyphImage, Half, GLYPH_SIZE};
use crate::prob::ProbDist;
use crate::scalar::Scalar;
use crate::tensor::Graph;

/// Outcome of classifying one test instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub title: String,
    pub gold: usize,
    pub predicted: usize,
    pub probs: ProbDist,
    pub avg_char_frequency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
}

impl EvalRecord {
    pub fn new(
        title: &[char],
        gold: usize,
        probs: ProbDist,
        avg_char_frequency: f64,
        route: Option<Route>,
    ) -> Self {
        Self {
            title: title.iter().collect(),
            gold,
            predicted: probs.argmax(),
            probs,
            avg_char_frequency,
            route,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.gold
    }
}

/// Records for `data` from precomputed distributions.
pub fn make_records(
    data: &[Instance],
    preds: Vec<ProbDist>,
    table: &FrequencyTable,
    routes: Option<Vec<Route>>,
) -> Result<Vec<EvalRecord>> {
    if preds.len() != data.len() || routes.as_ref().is_some_and(|r| r.len() != data.len()) {
        return Err(Error::contract("one prediction per instance required"));
    }
    let mut routes = routes.map(|r| r.into_iter());
    data.iter()
        .zip(preds)
        .map(|(inst, p)| {
            let f = avg_char_frequency(&inst.title, table)?;
            Ok(EvalRecord::new(
                &inst.title,
                inst.label,
                p,
                f,
                routes.as_mut().and_then(|r| r.next()),
            ))
        })
        .collect()
}

/// Classifies every instance of `data` with `model`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &[Instance],
    table: &FrequencyTable,
) -> Result<Vec<EvalRecord>> {
    let titles: Vec<&[char]> = data.iter().map(|i| i.title.as_slice()).collect();
    make_records(data, model.predict_batch(&titles)?, table, None)
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::data("accuracy of zero records"));
    }
    Ok(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

/// Indices of `records` from rarest to most common; equal frequencies keep
/// input order.
pub fn rarity_order(records: &[EvalRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        records[a]
            .avg_char_frequency
            .total_cmp(&records[b].avg_char_frequency)
    });
    idx
}

/// Accuracy over the `k` instances with the lowest average character frequency.
pub fn k_rarest_accuracy(records: &[EvalRecord], k: usize) -> Result<f64> {
    if k == 0 || k > records.len() {
        return Err(Error::contract(format!(
            "k = {k} outside 1..={}",
            records.len()
        )));
    }
    let correct = rarity_order(records)[..k]
        .iter()
        .filter(|&&i| records[i].correct())
        .count();
    Ok(correct as f64 / k as f64)
}

/// `(rank, correct so far)` from rarest (rank 1) to most common.
pub fn cumulative_rarity_curve(records: &[EvalRecord]) -> Result<Vec<(usize, usize)>> {
    if records.is_empty() {
        return Err(Error::data("rarity curve of zero records"));
    }
    let mut total = 0;
    Ok(rarity_order(records)
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            total += records[i].correct() as usize;
            (rank + 1, total)
        })
        .collect())
}

pub fn curve_to_tsv(curve: &[(usize, usize)]) -> String {
    let mut s = String::from("rank\tcumulative_correct\n");
    for (r, c) in curve {
        let _ = writeln!(s, "{r}\t{c}");
    }
    s
}

/// One JSON object per line.
pub fn records_to_jsonl(records: &[EvalRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::data(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

/// Embedding sensitivity to hiding each half of a glyph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionHeatmap {
    /// L2 distance from the full-glyph embedding when keeping only the
    /// upper, lower, left and right half, in that order.
    pub distances: [f64; 4],
    /// Raw corner scores `[[top-left, top-right], [bottom-left, bottom-right]]`.
    pub corners: [[f64; 2]; 2],
    /// Corner scores divided by their maximum (all zero if that is 0).
    pub normalized: [[f64; 2]; 2],
    /// Row-major 36×36 bilinear upsampling of `normalized`.
    #[serde(skip)]
    pub overlay: Vec<f64>,
}

impl OcclusionHeatmap {
    /// Builds corner scores from the four keep-half distances.
    ///
    /// A corner's score adds the distances of the two masks that removed
    /// it: the top-left corner is hidden when keeping the lower or the right
    /// half.
    pub fn from_distances(distances: [f64; 4]) -> Self {
        let [up, low, left, right] = distances;
        let corners = [[low + right, low + left], [up + right, up + left]];
        let max = corners.iter().flatten().cloned().fold(0.0, f64::max);
        let normalized = corners.map(|row| row.map(|c| if max > 0.0 { c / max } else { 0.0 }));
        let last = (GLYPH_SIZE - 1) as f64;
        let mut overlay = Vec::with_capacity(GLYPH_SIZE * GLYPH_SIZE);
        for y in 0..GLYPH_SIZE {
            let v = y as f64 / last;
            for x in 0..GLYPH_SIZE {
                let u = x as f64 / last;
                let top = normalized[0][0] * (1.0 - u) + normalized[0][1] * u;
                let bottom = normalized[1][0] * (1.0 - u) + normalized[1][1] * u;
                overlay.push(top * (1.0 - v) + bottom * v);
            }
        }
        Self {
            distances,
            corners,
            normalized,
            overlay,
        }
    }

    /// Corner with the largest score as `(row, col)`; ties go to the first
    /// in row-major order.
    pub fn top_corner(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for r in 0..2 {
            for c in 0..2 {
                if self.corners[r][c] > self.corners[best.0][best.1] {
                    best = (r, c);
                }
            }
        }
        best
    }

    pub fn overlay_image(&self) -> GlyphImage {
        let px: Vec<f32> = self.overlay.iter().map(|&v| v as f32).collect();
        GlyphImage::from_pixels(&px).expect("36x36 overlay")
    }

    /// `glyph` with each pixel's ink scaled by the overlay.
    pub fn modulate(&self, glyph: &GlyphImage) -> GlyphImage {
        let px: Vec<f32> = glyph
            .pixels()
            .iter()
            .zip(&self.overlay)
            .map(|(&g, &o)| g * o as f32)
            .collect();
        GlyphImage::from_pixels(&px).expect("36x36 overlay")
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Occlusion heatmap of `img` under the model's glyph encoder.
pub fn occlusion_heatmap<T: Scalar>(
    model: &Model<T>,
    img: &GlyphImage,
) -> Result<OcclusionHeatmap> {
    let mut images = vec![img.clone()];
    images.extend(Half::ALL.iter().map(|&h| mask_half(img, h)));
    let refs: Vec<&GlyphImage> = images.iter().collect();
    let mut g = Graph::new();
    let out = model.embed_images(&mut g, &refs)?;
    let d = g.shape(out)[1];
    let rows: Vec<Vec<f64>> = g
        .value(out)
        .data()
        .chunks(d)
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect();
    let dist = |i: usize| l2(&rows[0], &rows[i]);
    Ok(OcclusionHeatmap::from_distances([
        dist(1),
        dist(2),
        dist(3),
        dist(4),
    ]))
}

/// The `k` candidates nearest to `query` by L2 distance, ties by codepoint.
/// The query itself is never returned.
pub fn knn_from_embeddings(
    query: (char, &[f64]),
    candidates: &[(char, Vec<f64>)],
    k: usize,
) -> Result<Vec<(char, f64)>> {
    let mut scored: Vec<(char, f64)> = candidates
        .iter()
        .filter(|(c, _)| *c != query.0)
        .map(|(c, e)| (*c, l2(query.1, e)))
        .collect();
    if k == 0 || k > scored.len() {
        return Err(Error::contract(format!(
            "k = {k} but only {} other characters are available",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Nearest neighbours of `query` among `chars` in the model's embedding space.
pub fn knn_chars<T: Scalar>(
    model: &Model<T>,
    chars: &[char],
    query: char,
    k: usize,
) -> Result<Vec<(char, f64)>> {
    if k >= chars.len() {
        return Err(Error::contract(format!(
            "k = {k} must be below the {} candidate characters",
            chars.len()
        )));
    }
    let mut all = chars.to_vec();
    all.push(query);
    let embs = model.char_embeddings(&all)?;
    let q = embs.last().expect("query embedding").clone();
    let cands: Vec<(char, Vec<f64>)> = chars.iter().copied().zip(embs).collect();
    knn_from_embeddings((query, &q), &cands, k)
}
