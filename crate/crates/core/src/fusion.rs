//! Combining lookup and glyph models: early, late and fallback fusion.

use serde::{Deserialize, Serialize};

use crate::classifier::Model;
use crate::corpus::FrequencyTable;
use crate::embed::glorot;
use crate::error::{Error, Result};
use crate::prob::ProbDist;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Projection of concatenated `[lookup; visual]` embeddings back to `d_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyFusionParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl EarlyFusionParams {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("fusion width must be positive"));
        }
        Ok(Self {
            weight: store.add("fusion.weight", glorot(rng, &[dim, 2 * dim], 2 * dim, dim)),
            bias: store.add("fusion.bias", Tensor::zeros([dim])),
            dim,
        })
    }

    /// `relu(P [lookup; visual] + b)` on `d_c` vectors or `B×d_c` batches.
    pub fn early_fuse_embed<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        lookup: NodeId,
        visual: NodeId,
    ) -> Result<NodeId> {
        let (ls, vs) = (g.shape(lookup), g.shape(visual));
        if ls.last() != Some(&self.dim) || ls != vs {
            return Err(Error::contract(format!(
                "early fusion expects two width-{} inputs, got {ls:?} and {vs:?}",
                self.dim
            )));
        }
        let joined = g.concat(lookup, visual)?;
        let (w, b) = (g.param(store, self.weight), g.param(store, self.bias));
        let z = g.affine(joined, w, Some(b))?;
        Ok(g.relu(z))
    }
}

/// Elementwise mean of two distributions.
pub fn late_fuse_predict(p_lookup: &ProbDist, p_visual: &ProbDist) -> Result<ProbDist> {
    if p_lookup.len() != p_visual.len() {
        return Err(Error::contract(format!(
            "late fusion of distributions over {} and {} categories",
            p_lookup.len(),
            p_visual.len()
        )));
    }
    let mean = p_lookup
        .probs()
        .iter()
        .zip(p_visual.probs())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    ProbDist::new(mean)
}

/// Mean training-set count of the characters in `title` (unseen count 0).
/// Uses the whole title, not the padded or truncated model input.
pub fn avg_char_frequency(title: &[char], table: &FrequencyTable) -> Result<f64> {
    if title.is_empty() {
        return Err(Error::contract(
            "average character frequency of an empty title",
        ));
    }
    let total: u64 = title.iter().map(|&c| table.count(c)).sum();
    Ok(total as f64 / title.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Lookup,
    Visual,
}

/// Routes rare instances to the glyph model and the rest to the lookup model.
#[derive(Clone, Debug, PartialEq)]
pub struct FallbackPolicy {
    pub threshold: f64,
    pub table: FrequencyTable,
}

impl FallbackPolicy {
    pub fn new(threshold: f64, table: FrequencyTable) -> Result<Self> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::config(format!(
                "fallback threshold must be >= 0, got {threshold}"
            )));
        }
        Ok(Self { threshold, table })
    }

    pub fn route(&self, title: &[char]) -> Result<Route> {
        Ok(
            if avg_char_frequency(title, &self.table)? <= self.threshold {
                Route::Visual
            } else {
                Route::Lookup
            },
        )
    }

    /// Returns whichever precomputed prediction the route selects.
    pub fn choose(
        &self,
        title: &[char],
        p_lookup: &ProbDist,
        p_visual: &ProbDist,
    ) -> Result<(ProbDist, Route)> {
        let route = self.route(title)?;
        let p = match route {
            Route::Lookup => p_lookup.clone(),
            Route::Visual => p_visual.clone(),
        };
        Ok((p, route))
    }
}

/// Predicts with the model the policy routes `title` to.
pub fn fallback_predict<T: Scalar>(
    title: &[char],
    lookup: &Model<T>,
    visual: &Model<T>,
    policy: &FallbackPolicy,
) -> Result<(ProbDist, Route)> {
    let route = policy.route(title)?;
    let p = match route {
        Route::Lookup => lookup.predict(title)?,
        Route::Visual => visual.predict(title)?,
    };
    Ok((p, route))
}
