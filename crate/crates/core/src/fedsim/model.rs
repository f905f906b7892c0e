//! Multinomial logistic regression used as every client's local model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// `K x d` weights (row-major) plus a `K` bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    n_classes: usize,
    dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelState {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn from_parts(n_classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != n_classes * dim || bias.len() != n_classes {
            return Err(Error::DimensionMismatch(format!(
                "expected {n_classes}x{dim} weights and {n_classes} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            n_classes,
            dim,
            weights,
            bias,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn same_shape(&self, other: &ModelState) -> bool {
        self.n_classes == other.n_classes && self.dim == other.dim
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Flat view over weights followed by biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let w = self.weights.len();
        if i < w {
            &mut self.weights[i]
        } else {
            &mut self.bias[i - w]
        }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            *o = self.bias[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Index of the largest logit; ties go to the lowest class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut logits = vec![0.0; self.n_classes];
        self.logits_into(x, &mut logits);
        argmax(&logits)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// In-place softmax; returns log-sum-exp of the input.
fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

fn check_compatible(model: &ModelState, data: &Dataset) -> Result<()> {
    if model.dim != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {}-dimensional features, dataset has {}",
            model.dim,
            data.dim()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= model.n_classes) {
        return Err(Error::invalid(format!(
            "label {bad} outside the model's {} classes",
            model.n_classes
        )));
    }
    Ok(())
}

/// Mean cross-entropy over `indices` and its gradient.
pub fn loss_and_gradient(model: &ModelState, data: &Dataset, indices: &[usize]) -> Result<(f64, ModelState)> {
    check_compatible(model, data)?;
    if indices.is_empty() {
        return Err(Error::invalid("gradient over an empty batch"));
    }
    let mut grad = ModelState::zeros(model.n_classes, model.dim);
    let loss = accumulate_gradient(model, data, indices, &mut grad);
    Ok((loss, grad))
}

fn accumulate_gradient(model: &ModelState, data: &Dataset, indices: &[usize], grad: &mut ModelState) -> f64 {
    let k = model.n_classes;
    let d = model.dim;
    grad.weights.iter_mut().for_each(|g| *g = 0.0);
    grad.bias.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / indices.len() as f64;
    let mut probs = vec![0.0; k];
    let mut loss = 0.0;
    for &i in indices {
        let x = data.feature(i);
        let y = data.labels()[i];
        model.logits_into(x, &mut probs);
        let true_logit = probs[y];
        loss += softmax_in_place(&mut probs) - true_logit;
        probs[y] -= 1.0;
        for c in 0..k {
            let delta = probs[c] * scale;
            grad.bias[c] += delta;
            let row = &mut grad.weights[c * d..(c + 1) * d];
            for (g, v) in row.iter_mut().zip(x) {
                *g += delta * v;
            }
        }
    }
    loss * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 1,
            batch_size: 32,
        }
    }
}

/// Mini-batch SGD on mean cross-entropy, reshuffling every epoch. Returns the
/// full local model.
pub fn local_train(model: &ModelState, data: &Dataset, params: &TrainParams, seed: u64) -> Result<ModelState> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if !(params.lr.is_finite() && params.lr > 0.0) || params.batch_size == 0 {
        return Err(Error::invalid(format!(
            "invalid training parameters lr = {}, batch_size = {}",
            params.lr, params.batch_size
        )));
    }
    check_compatible(model, data)?;
    let mut local = model.clone();
    let mut grad = ModelState::zeros(model.n_classes, model.dim);
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            accumulate_gradient(&local, data, batch, &mut grad);
            for (w, g) in local.weights.iter_mut().zip(&grad.weights) {
                *w -= params.lr * g;
            }
            for (b, g) in local.bias.iter_mut().zip(&grad.bias) {
                *b -= params.lr * g;
            }
        }
    }
    Ok(local)
}

/// Element-wise mean.
pub fn aggregate<'m>(models: impl IntoIterator<Item = &'m ModelState>) -> Result<ModelState> {
    let mut iter = models.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::invalid("aggregate needs at least one model"))?;
    let mut acc = first.clone();
    let mut count = 1usize;
    for m in iter {
        if !m.same_shape(&acc) {
            return Err(Error::DimensionMismatch(format!(
                "cannot average a {}x{} model with a {}x{} model",
                m.n_classes, m.dim, acc.n_classes, acc.dim
            )));
        }
        for (a, v) in acc.weights.iter_mut().zip(&m.weights) {
            *a += v;
        }
        for (a, v) in acc.bias.iter_mut().zip(&m.bias) {
            *a += v;
        }
        count += 1;
    }
    if count > 1 {
        let inv = 1.0 / count as f64;
        acc.weights.iter_mut().for_each(|w| *w *= inv);
        acc.bias.iter_mut().for_each(|b| *b *= inv);
    }
    Ok(acc)
}

/// Mean weighted by `weights` (e.g. sample counts).
pub fn aggregate_weighted(models: &[&ModelState], weights: &[f64]) -> Result<ModelState> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} models with {} weights",
            models.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("aggregation weights must be non-negative with a positive sum"));
    }
    let mut acc = ModelState::zeros(models[0].n_classes, models[0].dim);
    for (m, &w) in models.iter().zip(weights) {
        if !m.same_shape(&acc) {
            return Err(Error::DimensionMismatch("models disagree in shape".into()));
        }
        let s = w / total;
        for (a, v) in acc.weights.iter_mut().zip(&m.weights) {
            *a += s * v;
        }
        for (a, v) in acc.bias.iter_mut().zip(&m.bias) {
            *a += s * v;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(model: &ModelState, test_set: &Dataset) -> Result<Evaluation> {
    if test_set.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty test set"));
    }
    check_compatible(model, test_set)?;
    let mut logits = vec![0.0; model.n_classes];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..test_set.len() {
        let y = test_set.labels()[i];
        model.logits_into(test_set.feature(i), &mut logits);
        if argmax(&logits) == y {
            correct += 1;
        }
        let true_logit = logits[y];
        loss += softmax_in_place(&mut logits) - true_logit;
    }
    let n = test_set.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

/// Accuracy restricted to samples labelled `class`; `None` when absent.
pub fn class_accuracy(model: &ModelState, test_set: &Dataset, class: usize) -> Option<f64> {
    let idx: Vec<usize> = (0..test_set.len()).filter(|&i| test_set.labels()[i] == class).collect();
    if idx.is_empty() {
        return None;
    }
    let hits = idx.iter().filter(|&&i| model.predict(test_set.feature(i)) == class).count();
    Some(hits as f64 / idx.len() as f64)
}
