//! Tensor importance from warm-up dynamics.
//!
//! A short full-gradient warm-up is run; at its last step the applied update
//! `dw` and the gradient `g` at the updated weights give, per tensor,
//! `I_k = -sum(dw * g)`. Scores are then divided by the largest magnitude.

use std::fmt::Write as _;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{LayeredModel, ModelKind};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupConfig {
    pub steps: usize,
    pub lr: f64,
}

impl WarmupConfig {
    /// Five steps; `1e-2` for analytic objectives, `1e-3` for networks.
    pub fn default_for(kind: ModelKind) -> Self {
        let lr = match kind {
            ModelKind::Quadratic | ModelKind::Rosenbrock => 1e-2,
            ModelKind::Mlp | ModelKind::TinyAttentionLm => 1e-3,
        };
        Self { steps: 5, lr }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceProfile {
    names: Vec<String>,
    layer_indices: Vec<usize>,
    raw: Vec<f64>,
    scores: Vec<f64>,
    warmup_steps: usize,
    normalizer: f64,
}

impl ImportanceProfile {
    /// Build a profile from raw scores, normalizing by the largest magnitude.
    pub fn from_raw(names: Vec<String>, layer_indices: Vec<usize>, raw: Vec<f64>, warmup_steps: usize) -> Result<Self> {
        if names.len() != raw.len() || names.len() != layer_indices.len() {
            return Err(Error::config("importance names, layers and scores differ in length"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("importance scores must be finite"));
        }
        let normalizer = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let scores = if normalizer > 0.0 {
            raw.iter().map(|v| v / normalizer).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(Self { names, layer_indices, raw, scores, warmup_steps, normalizer })
    }

    /// Profile from scores that are used as given, without normalization.
    pub fn from_scores(names: Vec<String>, layer_indices: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        let mut p = Self::from_raw(names, layer_indices, scores.clone(), 0)?;
        p.scores = scores;
        p.normalizer = 1.0;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn layer_indices(&self) -> &[usize] {
        &self.layer_indices
    }

    /// Normalized scores in canonical tensor order.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn raw_scores(&self) -> &[f64] {
        &self.raw
    }

    pub fn score(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.scores[i])
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Tensor indices by decreasing score; equal scores go to the tensor
    /// nearer the output.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then(self.layer_indices[a].cmp(&self.layer_indices[b]))
                .then(a.cmp(&b))
        });
        idx
    }

    /// `tensor,layer_index,raw_importance,normalized_importance`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tensor,layer_index,raw_importance,normalized_importance\n");
        for i in 0..self.len() {
            writeln!(s, "{},{},{:e},{:e}", self.names[i], self.layer_indices[i], self.raw[i], self.scores[i]).unwrap();
        }
        s
    }
}

/// Run `warmup.steps` full-gradient descent steps cycling through `data`,
/// score every tensor at the final step, then restore `params` exactly.
pub fn estimate_importance(
    model: &LayeredModel,
    params: &mut ParamSet,
    data: &[Batch],
    warmup: WarmupConfig,
) -> Result<ImportanceProfile> {
    if data.is_empty() {
        return Err(Error::config("importance estimation needs at least one batch"));
    }
    if warmup.steps == 0 {
        return Err(Error::config("warm-up needs at least one step"));
    }
    if !(warmup.lr > 0.0 && warmup.lr.is_finite()) {
        return Err(Error::config("warm-up learning rate must be positive"));
    }
    model.check_params(params)?;
    let snapshot = params.clone();
    let result = warmup_scores(model, params, data, warmup);
    *params = snapshot;
    let raw = result?;
    let layers = params.iter().map(|t| t.layer_index()).collect();
    ImportanceProfile::from_raw(params.names(), layers, raw, warmup.steps)
}

fn warmup_scores(model: &LayeredModel, params: &mut ParamSet, data: &[Batch], warmup: WarmupConfig) -> Result<Vec<f64>> {
    let mut last_update: Vec<Vec<f64>> = Vec::new();
    let mut batch = &data[0];
    for step in 0..warmup.steps {
        batch = &data[step % data.len()];
        let grads = model.full_gradient(params, batch)?.into_indexed();
        last_update.clear();
        for (k, g) in grads.into_iter().enumerate() {
            let g = g.expect("full gradient covers every tensor");
            let dw: Vec<f64> = g.iter().map(|v| -warmup.lr * v).collect();
            for (w, d) in params.tensor_mut(k).data_mut().iter_mut().zip(&dw) {
                *w += d;
            }
            last_update.push(dw);
        }
    }
    let post = model.full_gradient(params, batch)?;
    Ok(last_update
        .iter()
        .enumerate()
        .map(|(k, dw)| {
            let g = post.by_index(k).expect("full gradient covers every tensor");
            -dw.iter().zip(g).map(|(d, g)| d * g).sum::<f64>()
        })
        .collect())
}
