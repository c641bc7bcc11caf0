//! Candidate sets and weighted draws for the value that turns a positive
//! caption into its hard negative.
//!
//! Strict sampling admits only values whose exact combination occurs in the
//! corpus tables; relaxed sampling also admits same-cluster attributes and
//! entities or predicates supported by a single pair table. Weights are raw
//! corpus counts so that foils follow the distribution of positive values.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{filter_noisy_candidates, GeometryThresholds, SlotContext};
use crate::corpus_stats::{AttributeClusters, LookupTables};
use crate::scene_graph::{RelationTriple, SceneGraph, SceneObject};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plausibility {
    Strict,
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Clean,
    Noisy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SamplingRegime {
    pub plausibility: Plausibility,
    pub noise: Noise,
}

impl SamplingRegime {
    pub const CLEAN_STRICT: Self = Self::new(Noise::Clean, Plausibility::Strict);
    pub const CLEAN_RELAXED: Self = Self::new(Noise::Clean, Plausibility::Relaxed);
    pub const NOISY_STRICT: Self = Self::new(Noise::Noisy, Plausibility::Strict);
    pub const NOISY_RELAXED: Self = Self::new(Noise::Noisy, Plausibility::Relaxed);
    pub const ALL: [Self; 4] = [
        Self::CLEAN_STRICT,
        Self::CLEAN_RELAXED,
        Self::NOISY_STRICT,
        Self::NOISY_RELAXED,
    ];

    pub const fn new(noise: Noise, plausibility: Plausibility) -> Self {
        SamplingRegime {
            plausibility,
            noise,
        }
    }
}

impl Default for SamplingRegime {
    fn default() -> Self {
        Self::CLEAN_STRICT
    }
}

impl fmt::Display for SamplingRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let noise = match self.noise {
            Noise::Clean => "clean",
            Noise::Noisy => "noisy",
        };
        let plausibility = match self.plausibility {
            Plausibility::Strict => "strict",
            Plausibility::Relaxed => "relaxed",
        };
        write!(f, "{noise}-{plausibility}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid regime {0:?}: expected one of clean-strict, clean-relaxed, noisy-strict, noisy-relaxed")]
pub struct RegimeParseError(pub String);

impl FromStr for SamplingRegime {
    type Err = RegimeParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Self::ALL
            .into_iter()
            .find(|r| r.to_string() == normalized)
            .ok_or_else(|| RegimeParseError(s.to_string()))
    }
}

impl Serialize for SamplingRegime {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SamplingRegime {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How draws are weighted among admissible candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Raw corpus co-occurrence counts.
    #[default]
    Matched,
    /// Every admissible candidate equally likely (bias ablation).
    Uniform,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Matched => "matched",
            Weighting::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoilSlot {
    Attribute,
    Subject,
    Object,
    Predicate,
    Count,
    ComparativeQuantifier,
    ExistencePolarity,
}

impl FoilSlot {
    pub fn as_str(self) -> &'static str {
        match self {
            FoilSlot::Attribute => "attribute",
            FoilSlot::Subject => "subject",
            FoilSlot::Object => "object",
            FoilSlot::Predicate => "predicate",
            FoilSlot::Count => "count",
            FoilSlot::ComparativeQuantifier => "comparative_quantifier",
            FoilSlot::ExistencePolarity => "existence_polarity",
        }
    }
}

/// No admissible foil exists; the caption type is skipped for this anchor.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("no admissible foil candidate")]
pub struct Infeasible;

/// Duplicate-free values with strictly positive weights, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedCandidates<T = String> {
    items: Vec<(T, f64)>,
}

impl<T> Default for WeightedCandidates<T> {
    fn default() -> Self {
        WeightedCandidates { items: Vec::new() }
    }
}

impl<T: PartialEq> WeightedCandidates<T> {
    /// Adds `value`; non-positive weights and repeated values are ignored.
    pub fn push(&mut self, value: T, weight: f64) {
        if weight > 0.0 && weight.is_finite() && !self.contains(&value) {
            self.items.push((value, weight));
        }
    }

    pub fn contains(&self, value: &T) -> bool {
        self.items.iter().any(|(v, _)| v == value)
    }

    pub fn weight_of(&self, value: &T) -> Option<f64> {
        self.items.iter().find(|(v, _)| v == value).map(|(_, w)| *w)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, f64)> {
        self.items.iter().map(|(v, w)| (v, *w))
    }

    pub fn retain(mut self, mut keep: impl FnMut(&T) -> bool) -> Self {
        self.items.retain(|(v, _)| keep(v));
        self
    }

    /// Same support, every weight set to one.
    pub fn uniform(mut self) -> Self {
        for (_, w) in &mut self.items {
            *w = 1.0;
        }
        self
    }

    pub fn weighted(self, weighting: Weighting) -> Self {
        match weighting {
            Weighting::Matched => self,
            Weighting::Uniform => self.uniform(),
        }
    }

    pub fn non_empty(self) -> Result<Self, Infeasible> {
        if self.is_empty() {
            Err(Infeasible)
        } else {
            Ok(self)
        }
    }

    /// True when every value of `self` is also a value of `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.items.iter().all(|(v, _)| other.contains(v))
    }
}

impl WeightedCandidates<String> {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut c = Self::default();
        for (v, w) in pairs {
            c.push(v.to_string(), w);
        }
        c
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(v, _)| v.as_str())
    }
}

/// Draws a value with probability proportional to its weight.
///
/// Panics on an empty set; callers handle [`Infeasible`] before drawing.
pub fn draw<'c, T, R: Rng + ?Sized>(candidates: &'c WeightedCandidates<T>, rng: &mut R) -> &'c T {
    assert!(!candidates.items.is_empty(), "draw from an empty candidate set");
    if candidates.items.len() == 1 {
        return &candidates.items[0].0;
    }
    let index = WeightedIndex::new(candidates.items.iter().map(|(_, w)| *w))
        .expect("weights are positive and finite");
    &candidates.items[index.sample(rng)].0
}

/// Foil attributes for `true_attr` on `object`.
pub fn candidate_attributes(
    true_attr: &str,
    object: &SceneObject,
    tables: &LookupTables,
    clusters: &AttributeClusters,
    regime: SamplingRegime,
) -> Result<WeightedCandidates, Infeasible> {
    let class = object.class_name.as_str();
    let admissible = |a: &str| a != true_attr && !object.has_attribute(a);
    let mut candidates = WeightedCandidates::default();
    for ((attribute, c), count) in &tables.attr_obj {
        if c == class && admissible(attribute) {
            candidates.push(attribute.clone(), *count as f64);
        }
    }
    if regime.plausibility == Plausibility::Relaxed {
        for sibling in clusters.siblings(true_attr).filter(|a| admissible(a)) {
            let pair_count = tables.attr_obj(sibling, class);
            let weight = if pair_count > 0 {
                pair_count
            } else {
                tables
                    .attribute_freq
                    .get(sibling)
                    .copied()
                    .unwrap_or(0)
                    .max(1)
            };
            candidates.push(sibling.to_string(), weight as f64);
        }
    }
    candidates.non_empty()
}

/// Corpus support for a substituted triple: the full-triple count under the
/// strict regime; under the relaxed regime the triple count when present,
/// otherwise the pair count that licenses it (0 when none does).
fn triple_support(
    tables: &LookupTables,
    regime: SamplingRegime,
    (s, p, o): (&str, &str, &str),
    slot: FoilSlot,
) -> u64 {
    let exact = tables.triple(s, p, o);
    if exact > 0 || regime.plausibility == Plausibility::Strict {
        return exact;
    }
    match slot {
        FoilSlot::Subject => tables.subj_pred(s, p),
        FoilSlot::Object => tables.pred_obj(p, o),
        FoilSlot::Predicate => tables.subj_pred(s, p).min(tables.pred_obj(p, o)),
        _ => 0,
    }
}

/// Foil classes for the subject or object of `triple`, drawn from classes
/// present in `scene`.
pub fn candidate_entities(
    slot: FoilSlot,
    triple: &RelationTriple,
    scene: &SceneGraph,
    tables: &LookupTables,
    regime: SamplingRegime,
    geometry: &GeometryThresholds,
) -> Result<WeightedCandidates, Infeasible> {
    let (Some(subject), Some(object)) = (scene.object(&triple.subject_id), scene.object(&triple.object_id)) else {
        return Err(Infeasible);
    };
    let predicate = triple.predicate.as_str();
    let (replaced, fixed) = match slot {
        FoilSlot::Subject => (subject, object),
        FoilSlot::Object => (object, subject),
        _ => panic!("candidate_entities called for {slot:?}"),
    };

    let mut candidates = WeightedCandidates::default();
    for class in scene.class_counts().keys() {
        if *class == replaced.class_name || *class == fixed.class_name {
            continue;
        }
        let instances = scene.instances_of(class);
        let annotated_true = instances.iter().any(|id| match slot {
            FoilSlot::Subject => scene.has_relation(id, predicate, &object.id),
            _ => scene.has_relation(&subject.id, predicate, id),
        });
        if annotated_true {
            continue;
        }
        let substituted = match slot {
            FoilSlot::Subject => (*class, predicate, object.class_name.as_str()),
            _ => (subject.class_name.as_str(), predicate, *class),
        };
        let support = triple_support(tables, regime, substituted, slot);
        candidates.push(class.to_string(), support as f64);
    }

    let context = match slot {
        FoilSlot::Subject => SlotContext::Subject {
            predicate,
            object_id: &object.id,
        },
        _ => SlotContext::Object {
            subject_id: &subject.id,
            predicate,
        },
    };
    filter_noisy_candidates(scene, context, candidates, regime.noise, geometry).non_empty()
}

/// Foil predicates for `triple`, drawn from every predicate in the tables.
pub fn candidate_predicates(
    triple: &RelationTriple,
    scene: &SceneGraph,
    tables: &LookupTables,
    regime: SamplingRegime,
    geometry: &GeometryThresholds,
) -> Result<WeightedCandidates, Infeasible> {
    let (Some(subject), Some(object)) = (scene.object(&triple.subject_id), scene.object(&triple.object_id)) else {
        return Err(Infeasible);
    };
    let mut candidates = WeightedCandidates::default();
    for predicate in tables.relation_freq.keys() {
        if *predicate == triple.predicate || scene.has_relation(&subject.id, predicate, &object.id) {
            continue;
        }
        let support = triple_support(
            tables,
            regime,
            (&subject.class_name, predicate, &object.class_name),
            FoilSlot::Predicate,
        );
        candidates.push(predicate.clone(), support as f64);
    }
    let context = SlotContext::Predicate {
        subject_id: &subject.id,
        object_id: &object.id,
    };
    filter_noisy_candidates(scene, context, candidates, regime.noise, geometry).non_empty()
}

/// Foil counts for a class with `true_count` instances, weighted by how
/// many corpus images show each count. Falls back to `true_count ± 1` when
/// the histogram offers nothing else.
pub fn candidate_counts(
    class: &str,
    true_count: u32,
    tables: &LookupTables,
    max_count: u32,
) -> WeightedCandidates<u32> {
    assert!(true_count >= 1, "count foils need at least one instance");
    let mut candidates = WeightedCandidates::default();
    if let Some(hist) = tables.class_count_hist.get(class) {
        if hist.len() > 1 {
            for (&count, &images) in hist {
                if count != true_count && (1..=max_count).contains(&count) {
                    candidates.push(count, images as f64);
                }
            }
        }
    }
    if candidates.is_empty() {
        for count in [true_count.wrapping_sub(1), true_count + 1] {
            if count != true_count && (1..=max_count).contains(&count) {
                candidates.push(count, 1.0);
            }
        }
    }
    candidates
}
