//! Text-only bias probe for caption pairs.
//!
//! A bag-of-words logistic regression is trained to tell positive captions
//! from negatives without seeing the image. Accuracy well above chance means
//! the negatives carry lexical cues. The probe is a lightweight proxy, not a
//! pretrained language model, so only orderings across sampling setups are
//! meaningful, not absolute numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption_gen::{Bindings, CaptionPair, CaptionType};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeError {
    #[error("no captions to train on")]
    Empty,
    #[error("training data holds only {0} captions; both labels are required")]
    SingleClass(&'static str),
}

/// One caption with its label, as the probe sees it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCaption {
    pub image_id: String,
    pub caption_type: CaptionType,
    pub text: String,
    pub positive: bool,
    pub bindings: Bindings,
}

/// Both captions of each pair, positive first.
pub fn labeled_captions(pairs: &[CaptionPair]) -> Vec<LabeledCaption> {
    pairs
        .iter()
        .flat_map(|p| {
            [
                (true, &p.positive_text, &p.positive_bindings),
                (false, &p.negative_text, &p.negative_bindings),
            ]
            .map(|(positive, text, bindings)| LabeledCaption {
                image_id: p.image_id.clone(),
                caption_type: p.caption_type,
                text: text.clone(),
                positive,
                bindings: bindings.clone(),
            })
        })
        .collect()
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse binary feature vector: sorted, distinct indices.
pub type Features = Vec<usize>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BowFeaturizer {
    vocabulary: BTreeMap<String, usize>,
    names: Vec<String>,
}

fn ngrams(text: &str) -> Vec<String> {
    let tokens = tokenize(text);
    let bigrams = tokens.windows(2).map(|w| format!("{} {}", w[0], w[1]));
    let mut grams: Vec<String> = bigrams.collect();
    grams.extend(tokens);
    grams
}

impl BowFeaturizer {
    /// Unigram and bigram vocabulary of `texts`, indexed in sorted order.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let grams: BTreeSet<String> = texts.into_iter().flat_map(ngrams).collect();
        let names: Vec<String> = grams.into_iter().collect();
        let vocabulary = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        BowFeaturizer { vocabulary, names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Out-of-vocabulary n-grams are dropped.
    pub fn features(&self, text: &str) -> Features {
        let mut f: Features = ngrams(text)
            .iter()
            .filter_map(|g| self.vocabulary.get(g).copied())
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Mean cross-entropy over each epoch's mini-batches.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(z)` for label 1 and `-ln(1 - σ(z))` for label 0, without overflow.
fn cross_entropy(z: f64, positive: bool) -> f64 {
    let m = if positive { -z } else { z };
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

fn logit(weights: &[f64], bias: f64, features: &[usize]) -> f64 {
    bias + features.iter().map(|&i| weights[i]).sum::<f64>()
}

/// Mean cross-entropy over `examples` and its gradient with respect to the
/// weights and the bias.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    examples: &[(Features, bool)],
) -> (f64, Vec<f64>, f64) {
    let mut grad = vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    let mut loss = 0.0;
    for (features, positive) in examples {
        let z = logit(weights, bias, features);
        loss += cross_entropy(z, *positive);
        let residual = sigmoid(z) - if *positive { 1.0 } else { 0.0 };
        for &i in features {
            grad[i] += residual;
        }
        grad_bias += residual;
    }
    let n = examples.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad, grad_bias / n)
}

/// Mini-batch SGD on mean cross-entropy; the step size in epoch `e`
/// (1-based) is `learning_rate / sqrt(e)`. Sequential and deterministic for
/// a fixed seed.
pub fn train_probe(
    examples: &[(Features, bool)],
    dimension: usize,
    config: &ProbeConfig,
) -> Result<ProbeModel, ProbeError> {
    if examples.is_empty() {
        return Err(ProbeError::Empty);
    }
    if examples.iter().all(|(_, p)| *p) {
        return Err(ProbeError::SingleClass("positive"));
    }
    if examples.iter().all(|(_, p)| !*p) {
        return Err(ProbeError::SingleClass("negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut weights = vec![0.0; dimension];
    let mut bias = 0.0;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let batch_size = config.batch_size.max(1);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let step = config.learning_rate / (epoch as f64).sqrt();
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            let mut grad: BTreeMap<usize, f64> = BTreeMap::new();
            let mut grad_bias = 0.0;
            for &k in batch {
                let (features, positive) = &examples[k];
                let z = logit(&weights, bias, features);
                total += cross_entropy(z, *positive);
                let residual = sigmoid(z) - if *positive { 1.0 } else { 0.0 };
                for &i in features {
                    *grad.entry(i).or_default() += residual;
                }
                grad_bias += residual;
            }
            let scale = step / batch.len() as f64;
            for (i, g) in grad {
                weights[i] -= scale * g;
            }
            bias -= scale * grad_bias;
        }
        epoch_losses.push(total / examples.len() as f64);
    }
    let (final_loss, _, _) = loss_and_gradient(&weights, bias, examples);
    Ok(ProbeModel {
        weights,
        bias,
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        epoch_losses,
        final_loss,
    })
}

impl ProbeModel {
    pub fn probability(&self, features: &[usize]) -> f64 {
        sigmoid(logit(&self.weights, self.bias, features))
    }

    pub fn predict(&self, features: &[usize]) -> bool {
        self.probability(features) >= 0.5
    }
}

/// Fraction of `examples` whose label `predict` gets right; 0 when empty.
pub fn accuracy(predict: impl Fn(&[usize]) -> bool + Sync, examples: &[(Features, bool)]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples
        .par_iter()
        .filter(|(f, label)| predict(f) == *label)
        .count();
    hits as f64 / examples.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Normalized frequency of predicates in captions of one polarity, read
/// from the `pred*` template bindings.
pub fn relation_distribution(captions: &[LabeledCaption], polarity: Polarity) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    let wanted = polarity == Polarity::Positive;
    for c in captions.iter().filter(|c| c.positive == wanted) {
        for (key, value) in &c.bindings {
            if key.starts_with("pred") {
                *counts.entry(value.clone()).or_default() += 1.0;
            }
        }
    }
    let total: f64 = counts.values().sum();
    counts.values_mut().for_each(|v| *v /= total);
    counts
}

/// Jensen-Shannon divergence in nats over the union of both supports.
/// Missing bins count as zero mass.
pub fn js_divergence(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    let kl_to_mixture = |a: f64, b: f64| if a > 0.0 { a * (2.0 * a / (a + b)).ln() } else { 0.0 };
    let mut js = 0.0;
    for k in keys {
        let a = p.get(k).copied().unwrap_or(0.0);
        let b = q.get(k).copied().unwrap_or(0.0);
        js += 0.5 * (kl_to_mixture(a, b) + kl_to_mixture(b, a));
    }
    js.clamp(0.0, std::f64::consts::LN_2)
}

/// Image ids for training and held-out evaluation, 80/20 after a seeded
/// shuffle of the sorted distinct ids.
pub fn split_images(captions: &[LabeledCaption], seed: u64) -> (BTreeSet<&str>, BTreeSet<&str>) {
    let ids: BTreeSet<&str> = captions.iter().map(|c| c.image_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (ids.len() * 4).div_ceil(5);
    let held_out = ids.split_off(cut.min(ids.len()));
    (ids.into_iter().collect(), held_out.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub ngram: String,
    /// Positive weights push towards the positive label.
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub probe: String,
    pub train_captions: usize,
    pub held_out_captions: usize,
    pub probe_accuracy: f64,
    pub per_type_accuracy: BTreeMap<CaptionType, f64>,
    pub relation_js_divergence: f64,
    pub positive_relations: BTreeMap<String, f64>,
    pub negative_relations: BTreeMap<String, f64>,
    pub top_features: Vec<Feature>,
    pub final_loss: f64,
}

pub const PROBE_NAME: &str = "bag-of-words logistic regression (text-only proxy probe)";

/// Trains on 80% of the images and reports held-out accuracy.
pub fn audit(captions: &[LabeledCaption], config: &ProbeConfig, top_k: usize) -> Result<BiasReport, ProbeError> {
    let (train_ids, _) = split_images(captions, config.seed);
    let (train, held_out): (Vec<&LabeledCaption>, Vec<&LabeledCaption>) =
        captions.iter().partition(|c| train_ids.contains(c.image_id.as_str()));
    let featurizer = BowFeaturizer::fit(train.iter().map(|c| c.text.as_str()));
    let featurize = |set: &[&LabeledCaption]| -> Vec<(Features, bool)> {
        set.par_iter()
            .map(|c| (featurizer.features(&c.text), c.positive))
            .collect()
    };
    let train_examples = featurize(&train);
    let model = train_probe(&train_examples, featurizer.len(), config)?;

    let held_examples = featurize(&held_out);
    let mut per_type_accuracy = BTreeMap::new();
    for caption_type in CaptionType::ALL {
        let subset: Vec<(Features, bool)> = held_out
            .iter()
            .zip(&held_examples)
            .filter(|(c, _)| c.caption_type == caption_type)
            .map(|(_, e)| e.clone())
            .collect();
        if !subset.is_empty() {
            per_type_accuracy.insert(caption_type, accuracy(|f| model.predict(f), &subset));
        }
    }

    let mut ranked: Vec<usize> = (0..featurizer.len()).collect();
    ranked.sort_by(|&a, &b| {
        model.weights[b]
            .abs()
            .total_cmp(&model.weights[a].abs())
            .then(a.cmp(&b))
    });
    let top_features = ranked
        .into_iter()
        .take(top_k)
        .map(|i| Feature {
            ngram: featurizer.name(i).to_string(),
            weight: model.weights[i],
        })
        .collect();

    let positive_relations = relation_distribution(captions, Polarity::Positive);
    let negative_relations = relation_distribution(captions, Polarity::Negative);
    Ok(BiasReport {
        probe: PROBE_NAME.to_string(),
        train_captions: train_examples.len(),
        held_out_captions: held_examples.len(),
        probe_accuracy: accuracy(|f| model.predict(f), &held_examples),
        per_type_accuracy,
        relation_js_divergence: js_divergence(&positive_relations, &negative_relations),
        positive_relations,
        negative_relations,
        top_features,
        final_loss: model.final_loss,
    })
}

/// Plain-text table: one row per caption type plus "all", one column per
/// labelled report. Accuracies are percentages.
pub fn render_table(reports: &[(String, BiasReport)]) -> String {
    let mut out = String::new();
    let width = reports.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(8);
    let _ = write!(out, "{:<24}", "caption type");
    for (label, _) in reports {
        let _ = write!(out, " {label:>width$}");
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |a| format!("{:.1}", 100.0 * a));
    for caption_type in CaptionType::ALL {
        let _ = write!(out, "{:<24}", caption_type.as_str());
        for (_, r) in reports {
            let _ = write!(out, " {:>width$}", cell(r.per_type_accuracy.get(&caption_type).copied()));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<24}", "all");
    for (_, r) in reports {
        let _ = write!(out, " {:>width$}", cell(Some(r.probe_accuracy)));
    }
    out.push('\n');
    let _ = write!(out, "{:<24}", "relation JS (nats)");
    for (_, r) in reports {
        let _ = write!(out, " {:>width$.4}", r.relation_js_divergence);
    }
    out.push('\n');
    out
}
