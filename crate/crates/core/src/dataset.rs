//! JSON-lines dataset records, ordered parallel generation and corpus
//! statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias_audit::{tokenize, LabeledCaption};
use crate::caption_gen::{Bindings, CaptionPair, CaptionType, GenerationReport, Generator, SkipRecord};
use crate::constraints::SpatialVerdict;
use crate::corpus_stats::LookupTables;
use crate::foil_sampler::FoilSlot;
use crate::scene_graph::SceneGraph;

pub const SCHEMA_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("hnc-core ", env!("CARGO_PKG_VERSION"));

/// Split label used when no split manifest is given.
pub const DEFAULT_SPLIT: &str = "all";

/// Images handed to the worker pool at a time; output order is unaffected.
const CHUNK: usize = 512;

/// One caption of a pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub image_id: String,
    pub split: String,
    pub caption_type: CaptionType,
    pub pair_index: u32,
    /// 1 for the positive caption, 0 for the negative.
    pub label: u8,
    pub text: String,
    pub foil_slot: FoilSlot,
    pub original_value: String,
    pub foil_value: String,
    pub regime: String,
    pub weighting: String,
    pub generator_version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_verdict: Option<SpatialVerdict>,
    pub bindings: Bindings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DatasetRecord {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }

    pub fn to_labeled(&self) -> LabeledCaption {
        LabeledCaption {
            image_id: self.image_id.clone(),
            caption_type: self.caption_type,
            text: self.text.clone(),
            positive: self.is_positive(),
            bindings: self.bindings.clone(),
        }
    }
}

/// Positive and negative record of `pair`.
pub fn pair_records(pair: &CaptionPair, split: &str, generator: &Generator<'_>) -> [DatasetRecord; 2] {
    let config = generator.config;
    let record = |label: u8, text: &str, bindings: &Bindings| DatasetRecord {
        schema_version: SCHEMA_VERSION,
        image_id: pair.image_id.clone(),
        split: split.to_string(),
        caption_type: pair.caption_type,
        pair_index: pair.pair_index,
        label,
        text: text.to_string(),
        foil_slot: pair.foil_slot,
        original_value: pair.original_value.clone(),
        foil_value: pair.foil_value.clone(),
        regime: config.regime.to_string(),
        weighting: config.weighting.as_str().to_string(),
        generator_version: GENERATOR_VERSION.to_string(),
        seed: config.global_seed,
        spatial_verdict: pair.spatial_verdict,
        bindings: bindings.clone(),
        note: pair.note.clone(),
    };
    [
        record(1, &pair.positive_text, &pair.positive_bindings),
        record(0, &pair.negative_text, &pair.negative_bindings),
    ]
}

/// Thread pool for generation; 0 workers means one per available core.
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build()
}

/// A scene with the split it belongs to.
#[derive(Clone, Copy, Debug)]
pub struct SplitScene<'a> {
    pub split: &'a str,
    pub scene: &'a SceneGraph,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub report: GenerationReport,
    pub skips: Vec<SkipRecord>,
    pub records: u64,
}

/// Generates every scene on `pool` and writes records to `out` ordered by
/// (split, image id), so the bytes do not depend on the worker count.
pub fn generate_dataset<W: Write>(
    generator: &Generator<'_>,
    scenes: &[SplitScene<'_>],
    pool: &rayon::ThreadPool,
    mut out: W,
) -> io::Result<GenerateOutcome> {
    let mut ordered: Vec<SplitScene<'_>> = scenes.to_vec();
    ordered.sort_by(|a, b| (a.split, &a.scene.image_id).cmp(&(b.split, &b.scene.image_id)));
    let mut outcome = GenerateOutcome::default();
    for chunk in ordered.chunks(CHUNK) {
        let outputs: Vec<_> = pool.install(|| {
            chunk
                .par_iter()
                .map(|s| generator.generate_for_image(s.scene))
                .collect()
        });
        for (s, output) in chunk.iter().zip(outputs) {
            outcome.report.record(&output);
            for pair in &output.pairs {
                for record in pair_records(pair, s.split, generator) {
                    serde_json::to_writer(&mut out, &record)?;
                    out.write_all(b"\n")?;
                    outcome.records += 1;
                }
            }
            outcome.skips.extend(output.skips);
        }
    }
    out.flush()?;
    Ok(outcome)
}

/// Records of a JSON-lines file; malformed lines are counted and skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadDataset {
    pub records: Vec<DatasetRecord>,
    pub malformed_lines: u64,
    /// 1-based line numbers of the first few malformed lines.
    pub malformed_examples: Vec<u64>,
}

pub fn read_dataset<R: BufRead>(input: R) -> io::Result<ReadDataset> {
    let mut read = ReadDataset::default();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DatasetRecord>(&line) {
            Ok(record) => read.records.push(record),
            Err(_) => {
                read.malformed_lines += 1;
                if read.malformed_examples.len() < 10 {
                    read.malformed_examples.push(n as u64 + 1);
                }
            }
        }
    }
    Ok(read)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_captions: u64,
    pub pairs: u64,
    pub images: u64,
    pub captions_per_split: BTreeMap<String, u64>,
    /// Mean number of tokens (lowercased alphanumeric runs) per caption.
    pub avg_caption_tokens: f64,
    pub avg_captions_per_image: f64,
    pub per_type: BTreeMap<String, u64>,
    pub per_regime: BTreeMap<String, u64>,
    pub malformed_lines: u64,
}

pub fn stats(records: &[DatasetRecord], malformed_lines: u64) -> StatsReport {
    let mut report = StatsReport {
        total_captions: records.len() as u64,
        malformed_lines,
        ..Default::default()
    };
    let mut images = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    let mut tokens = 0u64;
    for r in records {
        images.insert((&r.split, &r.image_id));
        pairs.insert((&r.split, &r.image_id, r.caption_type, r.pair_index, &r.regime, r.seed));
        tokens += tokenize(&r.text).len() as u64;
        *report.captions_per_split.entry(r.split.clone()).or_default() += 1;
        *report.per_type.entry(r.caption_type.to_string()).or_default() += 1;
        *report.per_regime.entry(r.regime.clone()).or_default() += 1;
    }
    report.images = images.len() as u64;
    report.pairs = pairs.len() as u64;
    if !records.is_empty() {
        report.avg_caption_tokens = tokens as f64 / records.len() as f64;
        report.avg_captions_per_image = records.len() as f64 / report.images as f64;
    }
    report
}

impl StatsReport {
    /// Per-type distribution as a text table.
    pub fn render(&self) -> String {
        let mut out = format!(
            "captions {}\npairs {}\nimages {}\navg caption tokens {:.2}\navg captions per image {:.2}\n",
            self.total_captions, self.pairs, self.images, self.avg_caption_tokens, self.avg_captions_per_image
        );
        if self.malformed_lines > 0 {
            out.push_str(&format!("malformed lines skipped {}\n", self.malformed_lines));
        }
        for (split, n) in &self.captions_per_split {
            out.push_str(&format!("split {split:<20} {n:>10}\n"));
        }
        for (regime, n) in &self.per_regime {
            out.push_str(&format!("regime {regime:<19} {n:>10}\n"));
        }
        for caption_type in CaptionType::ALL {
            let n = self.per_type.get(caption_type.as_str()).copied().unwrap_or(0);
            let share = if self.total_captions > 0 { 100.0 * n as f64 / self.total_captions as f64 } else { 0.0 };
            out.push_str(&format!("{:<24} {n:>10} {share:>6.2}%\n", caption_type.as_str()));
        }
        out
    }
}

/// Corpus vocabulary absent from the tables the generator samples from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyMismatch {
    pub unknown_classes: BTreeSet<String>,
    pub unknown_attributes: BTreeSet<String>,
    pub unknown_predicates: BTreeSet<String>,
}

impl VocabularyMismatch {
    pub fn is_empty(&self) -> bool {
        self.unknown_classes.is_empty() && self.unknown_attributes.is_empty() && self.unknown_predicates.is_empty()
    }
}

pub fn vocabulary_mismatch<'a>(tables: &LookupTables, scenes: impl IntoIterator<Item = &'a SceneGraph>) -> VocabularyMismatch {
    let classes = tables.classes();
    let mut m = VocabularyMismatch::default();
    for scene in scenes {
        for o in scene.objects.values() {
            if !classes.contains(o.class_name.as_str()) {
                m.unknown_classes.insert(o.class_name.clone());
            }
            for a in &o.attributes {
                if !tables.attribute_freq.contains_key(a) {
                    m.unknown_attributes.insert(a.clone());
                }
            }
            for r in &o.relations {
                if !tables.relation_freq.contains_key(&r.predicate) {
                    m.unknown_predicates.insert(r.predicate.clone());
                }
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(image: &str, label: u8, text: &str) -> DatasetRecord {
        DatasetRecord {
            schema_version: SCHEMA_VERSION,
            image_id: image.into(),
            split: DEFAULT_SPLIT.into(),
            caption_type: CaptionType::Attribute,
            pair_index: 0,
            label,
            text: text.into(),
            foil_slot: FoilSlot::Attribute,
            original_value: "white".into(),
            foil_value: "teal".into(),
            regime: "clean-strict".into(),
            weighting: "matched".into(),
            generator_version: GENERATOR_VERSION.into(),
            seed: 0,
            spatial_verdict: None,
            bindings: Bindings::new(),
            note: None,
        }
    }

    #[test]
    fn four_records_make_two_pairs() {
        let records = vec![
            record("a", 1, "The bowl is white."),
            record("a", 0, "The bowl is teal."),
            record("b", 1, "The bowl is white."),
            record("b", 0, "The bowl is teal."),
        ];
        let s = stats(&records, 0);
        assert_eq!((s.total_captions, s.pairs, s.images), (4, 2, 2));
        assert_eq!(s.avg_caption_tokens, 4.0);
        assert_eq!(s.per_type["attribute"], 4);
    }

    #[test]
    fn malformed_lines_are_skipped() {
        let good = serde_json::to_string(&record("a", 1, "x")).unwrap();
        let text = format!("{good}\nnot json\n\n{good}\n{{\"label\": 1}}\n");
        let read = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(read.records.len(), 2);
        assert_eq!(read.malformed_lines, 2);
        assert_eq!(read.malformed_examples, vec![2, 5]);
    }

    #[test]
    fn record_round_trips() {
        let mut r = record("a", 0, "The bowl is teal.");
        r.spatial_verdict = Some(SpatialVerdict::Unknown);
        r.note = Some("n".into());
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<DatasetRecord>(&line).unwrap(), r);
    }
}
