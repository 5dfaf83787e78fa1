use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::mlp::{softmax_t, MlpModel};
use crate::data::{LabeledSample, ProxyFeatures};
use crate::rng;
use crate::{Error, Result};

/// Mini-batch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            epochs: 1,
            lr: 0.05,
            batch_size: 32,
        }
    }
}

impl SgdParams {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(
                "lr",
                alloc::format!("{} must be positive", self.lr),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Server-averaged class probabilities for one proxy sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTarget {
    pub proxy_index: usize,
    pub probs: Vec<f64>,
}

impl SoftTarget {
    pub fn new(proxy_index: usize, probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::param("probs", "not a probability vector"));
        }
        Ok(SoftTarget { proxy_index, probs })
    }
}

/// Loss `τ² · CE(target, softmax(z/τ))` averaged over `batch`, with the
/// gradient in [`MlpModel::parameters`] layout.
///
/// With `τ = 1` and one-hot targets this is ordinary cross-entropy.
pub fn loss_and_gradient(
    model: &MlpModel,
    batch: &[(&[f64], &[f64])],
    temperature: f64,
) -> (f64, Vec<f64>) {
    let mut grad = alloc::vec![0.0; model.num_parameters()];
    let mut loss = 0.0;
    let layers = model.layers();
    // offset of each layer's block in the flat gradient
    let mut offsets = Vec::with_capacity(layers.len());
    let mut acc = 0;
    for l in layers {
        offsets.push(acc);
        acc += l.weights.as_slice().len() + l.biases.len();
    }
    let tau = temperature;
    for &(x, target) in batch {
        let acts = model.forward_trace(x);
        let logits = &acts[acts.len() - 1];
        let q = softmax_t(logits, tau);
        loss += -tau
            * tau
            * target
                .iter()
                .zip(&q)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, qi)| p * libm::log(qi.max(f64::MIN_POSITIVE)))
                .sum::<f64>();
        // d loss / d logits = τ (q - p)
        let mut delta: Vec<f64> = q
            .iter()
            .zip(target)
            .map(|(qi, pi)| tau * (qi - pi))
            .collect();
        for li in (0..layers.len()).rev() {
            let layer = &layers[li];
            let input = &acts[li];
            let (n_out, n_in) = (layer.outputs(), layer.inputs());
            let block = &mut grad[offsets[li]..offsets[li] + n_out * n_in + n_out];
            let (gw, gb) = block.split_at_mut(n_out * n_in);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if li > 0 {
                let mut prev = alloc::vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(layer.weights.row(o)) {
                        *p += d * w;
                    }
                }
                // ReLU gate: inactive units pass no gradient
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

fn apply_step(model: &mut MlpModel, grad: &[f64], lr: f64) {
    let mut rest = grad;
    for l in model.layers_mut() {
        let w = l.weights.as_mut_slice();
        let (head, tail) = rest.split_at(w.len());
        w.iter_mut().zip(head).for_each(|(p, g)| *p -= lr * g);
        let (head, tail) = tail.split_at(l.biases.len());
        l.biases
            .iter_mut()
            .zip(head)
            .for_each(|(p, g)| *p -= lr * g);
        rest = tail;
    }
}

/// Shared SGD loop: one shuffled pass per epoch, mean loss per epoch out.
fn sgd(
    model: &mut MlpModel,
    examples: &[(&[f64], &[f64])],
    params: &SgdParams,
    temperature: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::with_capacity(params.epochs);
    let mut batch = Vec::with_capacity(params.batch_size);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(params.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (loss, grad) = loss_and_gradient(model, &batch, temperature);
            total += loss * chunk.len() as f64;
            apply_step(model, &grad, params.lr);
        }
        let mean = total / examples.len().max(1) as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(mean);
    }
    Ok(losses)
}

fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = alloc::vec![0.0; classes];
    v[label] = 1.0;
    v
}

fn check_inputs<'a>(model: &MlpModel, xs: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    for x in xs {
        if x.len() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.input_dim(),
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// Cross-entropy training on labelled data. Returns the mean loss of each
/// epoch.
pub fn train_supervised(
    model: &mut MlpModel,
    dataset: &[LabeledSample],
    params: &SgdParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let classes = model.num_classes();
    check_inputs(model, dataset.iter().map(|s| s.features.as_slice()))?;
    if let Some(s) = dataset.iter().find(|s| s.label >= classes) {
        return Err(Error::param(
            "label",
            alloc::format!("{} >= {classes}", s.label),
        ));
    }
    let targets: Vec<Vec<f64>> = dataset.iter().map(|s| one_hot(s.label, classes)).collect();
    let examples: Vec<(&[f64], &[f64])> = dataset
        .iter()
        .zip(&targets)
        .map(|(s, t)| (s.features.as_slice(), t.as_slice()))
        .collect();
    sgd(model, &examples, params, 1.0, seed)
}

/// Distills `targets` into `model` at temperature `τ` (loss scaled by `τ²`).
/// An empty target set leaves the model untouched.
pub fn distill(
    model: &mut MlpModel,
    proxy: ProxyFeatures<'_>,
    targets: &[SoftTarget],
    params: &SgdParams,
    temperature: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param("temperature", "must be positive"));
    }
    if let Some(t) = targets.iter().find(|t| t.proxy_index >= proxy.len()) {
        return Err(Error::param(
            "targets",
            alloc::format!("proxy index {} out of range {}", t.proxy_index, proxy.len()),
        ));
    }
    if let Some(t) = targets
        .iter()
        .find(|t| t.probs.len() != model.num_classes())
    {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            got: t.probs.len(),
        });
    }
    check_inputs(model, targets.iter().map(|t| proxy.get(t.proxy_index)))?;
    let examples: Vec<(&[f64], &[f64])> = targets
        .iter()
        .map(|t| (proxy.get(t.proxy_index), t.probs.as_slice()))
        .collect();
    sgd(model, &examples, params, temperature, seed)
}

/// Fraction of `test_set` whose argmax prediction matches the label.
pub fn evaluate(model: &MlpModel, test_set: &[LabeledSample]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0usize;
    for s in test_set {
        if model.predict(&s.features)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}
