//! Positive/negative caption pairs from one scene graph.
//!
//! For every caption type the generator checks whether the scene supports
//! the template, instantiates a true caption, then replaces exactly one
//! template slot with a sampled foil to obtain the hard negative.

mod balance;
mod families;
mod realize;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{AmbiguityLexicons, GeometryThresholds, SpatialVerdict};
use crate::corpus_stats::{AttributeClusters, LookupTables};
use crate::foil_sampler::{FoilSlot, SamplingRegime, Weighting};
use crate::scene_graph::SceneGraph;

pub use balance::{verify_balance, BalanceReport, ValueBalance};
pub use realize::{number_word, Realizer};

/// Template slot name → value.
pub type Bindings = BTreeMap<String, String>;

pub const QUANTIFIERS: [&str; 3] = ["fewer", "more", "as many"];
pub const POLARITIES: [&str; 2] = ["no", "at least one"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaptionType {
    #[serde(rename = "attribute")]
    Attribute,
    #[serde(rename = "attribute_relation")]
    AttributeRelation,
    #[serde(rename = "relation")]
    Relation,
    #[serde(rename = "relation_attribute")]
    RelationAttribute,
    #[serde(rename = "object_count")]
    ObjectCount,
    #[serde(rename = "object_compare_count")]
    ObjectCompareCount,
    #[serde(rename = "verify_object_attribute")]
    VerifyObjectAttribute,
    #[serde(rename = "verify_object_relation")]
    VerifyObjectRelation,
    #[serde(rename = "AND_logic_attribute")]
    AndLogicAttribute,
    #[serde(rename = "AND_logic_relation")]
    AndLogicRelation,
    #[serde(rename = "XOR_logic_attribute")]
    XorLogicAttribute,
    #[serde(rename = "XOR_logic_relation")]
    XorLogicRelation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Attribute,
    Relation,
    Counting,
    Existence,
    Reasoning,
}

impl CaptionType {
    pub const ALL: [CaptionType; 12] = [
        CaptionType::Attribute,
        CaptionType::AttributeRelation,
        CaptionType::Relation,
        CaptionType::RelationAttribute,
        CaptionType::ObjectCount,
        CaptionType::ObjectCompareCount,
        CaptionType::VerifyObjectAttribute,
        CaptionType::VerifyObjectRelation,
        CaptionType::AndLogicAttribute,
        CaptionType::AndLogicRelation,
        CaptionType::XorLogicAttribute,
        CaptionType::XorLogicRelation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaptionType::Attribute => "attribute",
            CaptionType::AttributeRelation => "attribute_relation",
            CaptionType::Relation => "relation",
            CaptionType::RelationAttribute => "relation_attribute",
            CaptionType::ObjectCount => "object_count",
            CaptionType::ObjectCompareCount => "object_compare_count",
            CaptionType::VerifyObjectAttribute => "verify_object_attribute",
            CaptionType::VerifyObjectRelation => "verify_object_relation",
            CaptionType::AndLogicAttribute => "AND_logic_attribute",
            CaptionType::AndLogicRelation => "AND_logic_relation",
            CaptionType::XorLogicAttribute => "XOR_logic_attribute",
            CaptionType::XorLogicRelation => "XOR_logic_relation",
        }
    }

    pub fn category(self) -> Category {
        match self {
            CaptionType::Attribute | CaptionType::AttributeRelation => Category::Attribute,
            CaptionType::Relation | CaptionType::RelationAttribute => Category::Relation,
            CaptionType::ObjectCount | CaptionType::ObjectCompareCount => Category::Counting,
            CaptionType::VerifyObjectAttribute | CaptionType::VerifyObjectRelation => {
                Category::Existence
            }
            _ => Category::Reasoning,
        }
    }

    /// Counting captions quantify over all instances of a class and are
    /// exempt from the single-instance gate.
    pub fn is_counting(self) -> bool {
        self.category() == Category::Counting
    }
}

impl fmt::Display for CaptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("unknown caption type {0:?}")]
pub struct UnknownCaptionType(pub String);

impl FromStr for CaptionType {
    type Err = UnknownCaptionType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownCaptionType(s.to_string()))
    }
}

/// One positive caption and its minimally edited negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionPair {
    pub image_id: String,
    pub caption_type: CaptionType,
    pub pair_index: u32,
    pub positive_text: String,
    pub negative_text: String,
    pub foil_slot: FoilSlot,
    /// Template slot whose value differs between the two captions.
    pub foiled_binding: String,
    pub original_value: String,
    pub foil_value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_verdict: Option<SpatialVerdict>,
    pub positive_bindings: Bindings,
    pub negative_bindings: Bindings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CaptionPair {
    /// Slots whose values differ between the positive and negative bindings.
    pub fn differing_slots(&self) -> Vec<&str> {
        let mut keys: Vec<&str> = self
            .positive_bindings
            .keys()
            .chain(self.negative_bindings.keys())
            .map(String::as_str)
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.retain(|k| self.positive_bindings.get(*k) != self.negative_bindings.get(*k));
        keys
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancePolicy {
    /// Balanced types are emitted as couples of pairs whose positive and
    /// negative values mirror each other, so counts match exactly.
    #[default]
    Alternating,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse generation config: {0}")]
    Parse(String),
    #[error("invalid generation config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub regime: SamplingRegime,
    pub weighting: Weighting,
    pub global_seed: u64,
    /// Pairs per caption type per image. For the comparative-count and
    /// existence types the cap counts balanced couples of pairs.
    pub max_pairs_per_type_per_image: u32,
    /// Largest count rendered in counting captions.
    pub max_count: u32,
    pub geometry: GeometryThresholds,
    pub balance_policy: BalancePolicy,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            regime: SamplingRegime::CLEAN_STRICT,
            weighting: Weighting::Matched,
            global_seed: 0,
            max_pairs_per_type_per_image: 1,
            max_count: 10,
            geometry: GeometryThresholds::default(),
            balance_policy: BalancePolicy::Alternating,
        }
    }
}

impl GenerationConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: GenerationConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_pairs_per_type_per_image < 1 {
            return Err(ConfigError::Invalid(
                "max_pairs_per_type_per_image must be at least 1".into(),
            ));
        }
        if self.max_count < 2 {
            return Err(ConfigError::Invalid("max_count must be at least 2".into()));
        }
        let g = &self.geometry;
        if !(g.overlap_ratio > 0.0 && g.overlap_ratio <= 1.0) {
            return Err(ConfigError::Invalid(
                "geometry.overlap_ratio must lie in (0, 1]".into(),
            ));
        }
        if !(g.near_ratio > 0.0 && g.near_ratio <= 1.0) {
            return Err(ConfigError::Invalid(
                "geometry.near_ratio must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// The scene has nothing the template can describe after gating.
    NoAnchor,
    /// Anchors exist but none admits a foil.
    NoFoil,
    /// A balanced couple could not be formed.
    Unbalanceable,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::NoAnchor => "no_anchor",
            SkipReason::NoFoil => "no_foil",
            SkipReason::Unbalanceable => "unbalanceable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub image_id: String,
    pub caption_type: CaptionType,
    pub reason: SkipReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeReport {
    pub emitted_pairs: u64,
    pub images_emitting: u64,
    pub images_skipped: u64,
    pub skip_reasons: BTreeMap<String, u64>,
}

/// Emitted and skipped counts per caption type.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub images: u64,
    pub pairs: u64,
    pub per_type: BTreeMap<CaptionType, TypeReport>,
}

impl GenerationReport {
    pub fn record(&mut self, output: &ImageOutput) {
        self.images += 1;
        self.pairs += output.pairs.len() as u64;
        let mut emitted: BTreeMap<CaptionType, u64> = BTreeMap::new();
        for pair in &output.pairs {
            *emitted.entry(pair.caption_type).or_default() += 1;
        }
        for (caption_type, n) in emitted {
            let entry = self.per_type.entry(caption_type).or_default();
            entry.emitted_pairs += n;
            entry.images_emitting += 1;
        }
        for skip in &output.skips {
            let entry = self.per_type.entry(skip.caption_type).or_default();
            entry.images_skipped += 1;
            *entry
                .skip_reasons
                .entry(skip.reason.as_str().to_string())
                .or_default() += 1;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageOutput {
    pub image_id: String,
    pub pairs: Vec<CaptionPair>,
    pub skips: Vec<SkipRecord>,
}

/// Everything generation reads, borrowed immutably so one generator can be
/// shared across worker threads.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub tables: &'a LookupTables,
    pub clusters: &'a AttributeClusters,
    pub lexicons: &'a AmbiguityLexicons,
    pub config: &'a GenerationConfig,
    pub realizer: &'a Realizer,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Private stream for one (seed, image, caption type); independent of the
/// order in which images or types are processed.
pub fn caption_rng(global_seed: u64, image_id: &str, caption_type: CaptionType) -> ChaCha8Rng {
    let mixed = splitmix64(global_seed ^ splitmix64(fnv1a(image_id.as_bytes())))
        ^ fnv1a(caption_type.as_str().as_bytes());
    ChaCha8Rng::seed_from_u64(splitmix64(mixed))
}

impl Generator<'_> {
    /// Runs every caption type on `scene`. Types the scene cannot support
    /// produce a skip record instead of pairs.
    pub fn generate_for_image(&self, scene: &SceneGraph) -> ImageOutput {
        let mut output = ImageOutput {
            image_id: scene.image_id.clone(),
            ..Default::default()
        };
        for caption_type in CaptionType::ALL {
            let mut rng = caption_rng(self.config.global_seed, &scene.image_id, caption_type);
            match self.instantiate(scene, caption_type, &mut rng) {
                Ok(pairs) => output.pairs.extend(pairs),
                Err(reason) => output.skips.push(SkipRecord {
                    image_id: scene.image_id.clone(),
                    caption_type,
                    reason,
                }),
            }
        }
        output
    }

    /// Pairs of a single caption type.
    pub fn instantiate(
        &self,
        scene: &SceneGraph,
        caption_type: CaptionType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CaptionPair>, SkipReason> {
        match caption_type.category() {
            Category::Attribute => self.instantiate_attribute_family(scene, caption_type, rng),
            Category::Relation => self.instantiate_relation_family(scene, caption_type, rng),
            Category::Counting => self.instantiate_counting_family(scene, caption_type, rng),
            Category::Existence => self.instantiate_existence_family(scene, caption_type, rng),
            Category::Reasoning => self.instantiate_reasoning_family(scene, caption_type, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_types_five_categories() {
        assert_eq!(CaptionType::ALL.len(), 12);
        let categories: std::collections::BTreeSet<_> =
            CaptionType::ALL.iter().map(|t| t.category()).collect();
        assert_eq!(categories.len(), 5);
        for t in CaptionType::ALL {
            assert_eq!(t.as_str().parse::<CaptionType>().unwrap(), t);
            assert_eq!(
                serde_json::to_string(&t).unwrap(),
                format!("\"{}\"", t.as_str())
            );
        }
    }

    #[test]
    fn config_round_trips_and_validates() {
        let config = GenerationConfig {
            regime: SamplingRegime::NOISY_RELAXED,
            global_seed: 7,
            ..Default::default()
        };
        assert_eq!(GenerationConfig::from_toml(&config.to_toml()).unwrap(), config);
        let text = "regime = \"clean-relaxed\"\nglobal_seed = 3\n[geometry]\nnear_ratio = 0.2\n";
        let parsed = GenerationConfig::from_toml(text).unwrap();
        assert_eq!(parsed.regime, SamplingRegime::CLEAN_RELAXED);
        assert_eq!(parsed.geometry.near_ratio, 0.2);
        assert_eq!(parsed.geometry.overlap_ratio, 0.3);
        assert!(matches!(
            GenerationConfig::from_toml("regime = \"muddy\""),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            GenerationConfig::from_toml("max_pairs_per_type_per_image = 0"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn rng_streams_differ_by_key() {
        use rand::Rng;
        let a: u64 = caption_rng(1, "img", CaptionType::Attribute).gen();
        let b: u64 = caption_rng(1, "img", CaptionType::Relation).gen();
        let c: u64 = caption_rng(2, "img", CaptionType::Attribute).gen();
        let again: u64 = caption_rng(1, "img", CaptionType::Attribute).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, again);
    }
}
