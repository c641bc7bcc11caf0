//! Ground-truth scene graphs in the GQA on-disk layout.
//!
//! A document is a JSON object mapping image ids to
//! `{width, height, objects: {id: {name, x, y, w, h, attributes, relations}}}`.
//! Parsing canonicalizes every token (lowercase, single spaces), clamps boxes
//! into the image rectangle and drops relations whose target does not resolve.
//! Everything that was altered or dropped is counted in a [`ParseReport`].

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Maximum number of warning messages kept verbatim in a report.
const MAX_WARNING_MESSAGES: usize = 1000;

#[derive(Debug, Error)]
pub enum SceneGraphError {
    #[error("malformed scene-graph document at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Axis-aligned box in integer pixels, origin at the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        debug_assert!(w > 0 && h > 0);
        BoundingBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        f64::from(self.x) + f64::from(self.w)
    }

    pub fn bottom(&self) -> f64 {
        f64::from(self.y) + f64::from(self.h)
    }

    pub fn center_x(&self) -> f64 {
        f64::from(self.x) + f64::from(self.w) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        f64::from(self.y) + f64::from(self.h) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub predicate: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneObject {
    pub id: String,
    pub class_name: String,
    pub attributes: Vec<String>,
    pub bbox: BoundingBox,
    pub relations: Vec<Relation>,
}

impl SceneObject {
    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }
}

/// (subject, predicate, object) edge between two objects of one scene.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationTriple {
    pub subject_id: String,
    pub predicate: String,
    pub object_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneGraph {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    /// Objects keyed by id, in document order.
    pub objects: IndexMap<String, SceneObject>,
}

impl SceneGraph {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.get(id)
    }

    /// Ids of all objects of `class_name`, in insertion order.
    pub fn instances_of(&self, class_name: &str) -> Vec<&str> {
        self.objects
            .values()
            .filter(|o| o.class_name == class_name)
            .map(|o| o.id.as_str())
            .collect()
    }

    pub fn instance_count(&self, class_name: &str) -> usize {
        self.objects
            .values()
            .filter(|o| o.class_name == class_name)
            .count()
    }

    /// Instance count per class, classes in order of first appearance.
    pub fn class_counts(&self) -> IndexMap<&str, usize> {
        let mut counts: IndexMap<&str, usize> = IndexMap::new();
        for object in self.objects.values() {
            *counts.entry(object.class_name.as_str()).or_default() += 1;
        }
        counts
    }

    /// The single object of `class_name`, if the class has exactly one instance.
    pub fn unique_instance(&self, class_name: &str) -> Option<&SceneObject> {
        let mut found = None;
        for object in self.objects.values() {
            if object.class_name == class_name {
                if found.is_some() {
                    return None;
                }
                found = Some(object);
            }
        }
        found
    }

    pub fn relation_triples(&self) -> Vec<RelationTriple> {
        self.objects
            .values()
            .flat_map(|o| {
                o.relations.iter().map(move |r| RelationTriple {
                    subject_id: o.id.clone(),
                    predicate: r.predicate.clone(),
                    object_id: r.target.clone(),
                })
            })
            .collect()
    }

    /// True when the annotation links `subject_id` to `object_id` with `predicate`.
    pub fn has_relation(&self, subject_id: &str, predicate: &str, object_id: &str) -> bool {
        self.objects.get(subject_id).is_some_and(|s| {
            s.relations
                .iter()
                .any(|r| r.predicate == predicate && r.target == object_id)
        })
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        f64::from(self.width).hypot(f64::from(self.height))
    }
}

/// Counts of everything the parser repaired or discarded.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub scenes: usize,
    pub objects: usize,
    pub relations: usize,
    pub skipped_scenes: usize,
    pub skipped_objects: usize,
    pub dropped_relations: usize,
    pub clamped_boxes: usize,
    pub deduplicated_attributes: usize,
    pub warning_count: usize,
    pub warnings: Vec<String>,
}

impl ParseReport {
    fn warn(&mut self, message: String) {
        warn!("{message}");
        self.warning_count += 1;
        if self.warnings.len() < MAX_WARNING_MESSAGES {
            self.warnings.push(message);
        }
    }

    pub fn merge(&mut self, other: ParseReport) {
        self.scenes += other.scenes;
        self.objects += other.objects;
        self.relations += other.relations;
        self.skipped_scenes += other.skipped_scenes;
        self.skipped_objects += other.skipped_objects;
        self.dropped_relations += other.dropped_relations;
        self.clamped_boxes += other.clamped_boxes;
        self.deduplicated_attributes += other.deduplicated_attributes;
        self.warning_count += other.warning_count;
        let room = MAX_WARNING_MESSAGES.saturating_sub(self.warnings.len());
        self.warnings.extend(other.warnings.into_iter().take(room));
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParsedScenes {
    /// Scenes keyed by image id.
    pub scenes: BTreeMap<String, SceneGraph>,
    pub report: ParseReport,
}

/// Lowercases and collapses internal whitespace.
pub fn canonical_token(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn parse_scene_graphs(raw: &[u8]) -> Result<ParsedScenes, SceneGraphError> {
    let document: IndexMap<String, Value> =
        serde_json::from_slice(raw).map_err(|e| SceneGraphError::Malformed {
            offset: byte_offset(raw, e.line(), e.column()),
            message: e.to_string(),
        })?;

    let converted: Vec<(String, Result<SceneGraph, String>, ParseReport)> = document
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(image_id, value)| {
            let mut report = ParseReport::default();
            let scene = convert_scene(&image_id, &value, &mut report);
            (image_id, scene, report)
        })
        .collect();

    let mut parsed = ParsedScenes::default();
    for (image_id, scene, report) in converted {
        parsed.report.merge(report);
        match scene {
            Ok(scene) => {
                parsed.report.scenes += 1;
                parsed.scenes.insert(image_id, scene);
            }
            Err(reason) => {
                parsed.report.skipped_scenes += 1;
                parsed.report.warn(format!("scene {image_id} skipped: {reason}"));
            }
        }
    }
    Ok(parsed)
}

pub fn read_scene_graphs(path: &Path) -> Result<ParsedScenes, SceneGraphError> {
    let raw = fs::read(path).map_err(|source| SceneGraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scene_graphs(&raw)
}

fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = raw
        .split_inclusive(|&b| b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum::<usize>();
    (line_start + column.saturating_sub(1)).min(raw.len())
}

fn as_pixel(value: Option<&Value>) -> Option<i64> {
    let number = value?.as_f64()?;
    number.is_finite().then(|| number.round() as i64)
}

fn dimension(value: &Map<String, Value>, key: &str) -> Result<u32, String> {
    match as_pixel(value.get(key)) {
        Some(v) if v > 0 && v <= i64::from(u32::MAX) => Ok(v as u32),
        Some(v) => Err(format!("{key} = {v} is not a positive pixel size")),
        None => Err(format!("missing or non-numeric {key}")),
    }
}

/// Clamps one axis `[start, start + len)` into `[0, limit)`; zero-length
/// results are widened to one pixel. Returns `(start, len, changed)`.
fn clamp_axis(start: i64, len: i64, limit: u32) -> (u32, u32, bool) {
    let limit = i64::from(limit);
    let mut lo = start.clamp(0, limit);
    let hi = start.saturating_add(len).clamp(0, limit);
    let mut extent = hi - lo;
    if extent < 1 {
        if lo >= limit {
            lo = limit - 1;
        }
        extent = 1;
    }
    let changed = lo != start || extent != len;
    (lo as u32, extent as u32, changed)
}

struct RawObject {
    class_name: String,
    attributes: Vec<String>,
    bbox: BoundingBox,
    relations: Vec<Relation>,
}

fn convert_object(
    width: u32,
    height: u32,
    value: &Value,
    report: &mut ParseReport,
) -> Result<RawObject, String> {
    let record = value.as_object().ok_or("object record is not a map")?;
    let name = record
        .get("name")
        .and_then(Value::as_str)
        .map(canonical_token)
        .filter(|n| !n.is_empty())
        .ok_or("missing name")?;
    let coord = |key: &str| as_pixel(record.get(key)).ok_or(format!("missing or non-numeric {key}"));
    let (x, y, w, h) = (coord("x")?, coord("y")?, coord("w")?, coord("h")?);
    let (x, w, clamped_x) = clamp_axis(x, w, width);
    let (y, h, clamped_y) = clamp_axis(y, h, height);
    if clamped_x || clamped_y {
        report.clamped_boxes += 1;
    }

    let mut attributes: Vec<String> = Vec::new();
    if let Some(list) = record.get("attributes") {
        let list = list.as_array().ok_or("attributes is not a list")?;
        for attribute in list {
            let attribute = canonical_token(attribute.as_str().ok_or("non-string attribute")?);
            if attribute.is_empty() {
                continue;
            }
            if attributes.contains(&attribute) {
                report.deduplicated_attributes += 1;
            } else {
                attributes.push(attribute);
            }
        }
    }

    let mut relations = Vec::new();
    if let Some(list) = record.get("relations") {
        let list = list.as_array().ok_or("relations is not a list")?;
        for relation in list {
            let predicate = relation.get("name").and_then(Value::as_str);
            let target = relation.get("object").and_then(Value::as_str);
            match (predicate, target) {
                (Some(p), Some(t)) if !canonical_token(p).is_empty() => relations.push(Relation {
                    predicate: canonical_token(p),
                    target: t.to_string(),
                }),
                _ => return Err("malformed relation entry".into()),
            }
        }
    }

    Ok(RawObject {
        class_name: name,
        attributes,
        bbox: BoundingBox::new(x, y, w, h),
        relations,
    })
}

fn convert_scene(
    image_id: &str,
    value: &Value,
    report: &mut ParseReport,
) -> Result<SceneGraph, String> {
    let record = value.as_object().ok_or("scene record is not a map")?;
    let width = dimension(record, "width")?;
    let height = dimension(record, "height")?;
    let empty = Map::new();
    let objects = match record.get("objects") {
        Some(Value::Object(objects)) => objects,
        None => &empty,
        Some(_) => return Err("objects is not a map".into()),
    };

    let mut raw_objects = Vec::with_capacity(objects.len());
    for (id, object) in objects {
        match convert_object(width, height, object, report) {
            Ok(raw) => raw_objects.push((id.clone(), raw)),
            Err(reason) => {
                report.skipped_objects += 1;
                report.warn(format!("image {image_id}: object {id} skipped: {reason}"));
            }
        }
    }

    let known: HashSet<&str> = raw_objects.iter().map(|(id, _)| id.as_str()).collect();
    let mut dangling = Vec::new();
    let mut resolved = IndexMap::with_capacity(raw_objects.len());
    for (id, raw) in &raw_objects {
        let mut relations = Vec::with_capacity(raw.relations.len());
        for relation in &raw.relations {
            if known.contains(relation.target.as_str()) {
                relations.push(relation.clone());
            } else {
                dangling.push(format!(
                    "image {image_id}: relation {id} -[{}]-> {} dropped: unknown target",
                    relation.predicate, relation.target
                ));
            }
        }
        report.relations += relations.len();
        resolved.insert(
            id.clone(),
            SceneObject {
                id: id.clone(),
                class_name: raw.class_name.clone(),
                attributes: raw.attributes.clone(),
                bbox: raw.bbox,
                relations,
            },
        );
    }
    report.dropped_relations += dangling.len();
    for message in dangling {
        report.warn(message);
    }
    report.objects += resolved.len();

    Ok(SceneGraph {
        image_id: image_id.to_string(),
        width,
        height,
        objects: resolved,
    })
}

/// GQA-layout JSON value for one scene; parsing it back yields an equal scene.
pub fn scene_to_value(scene: &SceneGraph) -> Value {
    let mut objects = Map::new();
    for object in scene.objects.values() {
        let relations: Vec<Value> = object
            .relations
            .iter()
            .map(|r| serde_json::json!({ "name": r.predicate, "object": r.target }))
            .collect();
        objects.insert(
            object.id.clone(),
            serde_json::json!({
                "name": object.class_name,
                "x": object.bbox.x,
                "y": object.bbox.y,
                "w": object.bbox.w,
                "h": object.bbox.h,
                "attributes": object.attributes,
                "relations": relations,
            }),
        );
    }
    serde_json::json!({
        "width": scene.width,
        "height": scene.height,
        "objects": objects,
    })
}

/// Serializes scenes as one GQA document, keys in iteration order.
pub fn write_scene_graphs<'a>(scenes: impl IntoIterator<Item = &'a SceneGraph>) -> Vec<u8> {
    let mut document = Map::new();
    for scene in scenes {
        document.insert(scene.image_id.clone(), scene_to_value(scene));
    }
    serde_json::to_vec(&Value::Object(document)).expect("scene graphs serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> ParsedScenes {
        parse_scene_graphs(text.as_bytes()).expect("parses")
    }

    /// Independent line-oriented reference: counts relation targets that do
    /// not name an object key in the pretty-printed fixture.
    fn reference_dangling_count(text: &str) -> usize {
        let mut ids = Vec::new();
        let mut targets = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("\"object\": \"") {
                targets.push(rest.trim_end_matches(['"', '}', ',', ' ']).to_string());
            } else if line.ends_with(": {") && line.starts_with("\"o") {
                ids.push(line.trim_start_matches('"').split('"').next().unwrap().to_string());
            }
        }
        targets.iter().filter(|t| !ids.contains(t)).count()
    }

    const TWO_OBJECTS: &str = r#"{
      "img1": {"width": 100, "height": 80, "extra": true, "objects": {
        "o1": {"name": "Cat", "x": 1, "y": 2, "w": 10, "h": 10,
               "attributes": ["gray"], "relations": [{"name": "to the left of", "object": "o2"}]},
        "o2": {"name": "bowl", "x": 50, "y": 2, "w": 10, "h": 10, "attributes": [], "relations": []}
      }}
    }"#;

    #[test]
    fn one_image_two_objects_one_relation() {
        let parsed = doc(TWO_OBJECTS);
        assert_eq!(parsed.scenes.len(), 1);
        let scene = &parsed.scenes["img1"];
        assert_eq!(scene.objects.len(), 2);
        assert_eq!(scene.relation_triples().len(), 1);
        assert_eq!(scene.objects["o1"].class_name, "cat");
        assert_eq!(parsed.report.warning_count, 0);
    }

    #[test]
    fn empty_document() {
        let parsed = doc("{}");
        assert!(parsed.scenes.is_empty());
        assert_eq!(parsed.report.warning_count, 0);
    }

    #[test]
    fn dangling_relation_is_dropped_and_counted() {
        let text = r#"{
  "img": {
    "width": 50,
    "height": 50,
    "objects": {
      "o1": {
        "name": "cat", "x": 0, "y": 0, "w": 5, "h": 5, "attributes": [],
        "relations": [
          {"name": "near",
           "object": "o99"},
          {"name": "near",
           "object": "o2"}
        ]
      },
      "o2": {
        "name": "dog", "x": 10, "y": 0, "w": 5, "h": 5, "attributes": [], "relations": []
      }
    }
  }
}"#;
        let parsed = doc(text);
        assert_eq!(reference_dangling_count(text), 1);
        assert_eq!(parsed.report.dropped_relations, 1);
        assert_eq!(parsed.report.warning_count, 1);
        assert_eq!(parsed.scenes["img"].relation_triples().len(), 1);
    }

    #[test]
    fn malformed_document_reports_offset() {
        let text = b"{\"a\": {\"width\": 1,, }}";
        match parse_scene_graphs(text) {
            Err(SceneGraphError::Malformed { offset, .. }) => assert_eq!(offset, 18),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_object_is_skipped() {
        let parsed = doc(
            r#"{"i": {"width": 10, "height": 10, "objects": {
                "a": {"name": "cup", "x": 0, "y": 0, "w": 2, "h": 2},
                "b": {"x": 0, "y": 0, "w": 2, "h": 2},
                "c": {"name": "plate", "x": 1, "y": 1, "w": 2, "h": 2,
                      "relations": [{"name": "under", "object": "b"}]}
            }}}"#,
        );
        let scene = &parsed.scenes["i"];
        assert_eq!(scene.objects.len(), 2);
        assert_eq!(parsed.report.skipped_objects, 1);
        assert_eq!(parsed.report.dropped_relations, 1);
        assert_eq!(parsed.report.warning_count, 2);
    }

    #[test]
    fn out_of_bounds_boxes_are_clamped() {
        let parsed = doc(
            r#"{"i": {"width": 100, "height": 50, "objects": {
                "a": {"name": "sky", "x": -5, "y": 0, "w": 120, "h": 60},
                "b": {"name": "dot", "x": 100, "y": 10, "w": 0, "h": 3}
            }}}"#,
        );
        let scene = &parsed.scenes["i"];
        assert_eq!(scene.objects["a"].bbox, BoundingBox::new(0, 0, 100, 50));
        assert_eq!(scene.objects["b"].bbox, BoundingBox::new(99, 10, 1, 3));
        assert_eq!(parsed.report.clamped_boxes, 2);
    }

    #[test]
    fn tokens_are_canonical_and_attributes_deduplicated() {
        let parsed = doc(
            r#"{"i": {"width": 10, "height": 10, "objects": {
                "a": {"name": " Traffic   Light", "x": 0, "y": 0, "w": 2, "h": 2,
                      "attributes": ["Red", "red", "Black  and White"]}
            }}}"#,
        );
        let object = &parsed.scenes["i"].objects["a"];
        assert_eq!(object.class_name, "traffic light");
        assert_eq!(object.attributes, vec!["red", "black and white"]);
        assert_eq!(parsed.report.deduplicated_attributes, 1);
    }

    #[test]
    fn instances_follow_insertion_order() {
        let parsed = doc(
            r#"{"i": {"width": 10, "height": 10, "objects": {
                "z": {"name": "sheep", "x": 0, "y": 0, "w": 2, "h": 2},
                "m": {"name": "dog", "x": 0, "y": 0, "w": 2, "h": 2},
                "a": {"name": "sheep", "x": 5, "y": 0, "w": 2, "h": 2}
            }}}"#,
        );
        let scene = &parsed.scenes["i"];
        assert_eq!(scene.instances_of("sheep"), vec!["z", "a"]);
        assert!(scene.instances_of("unicorn").is_empty());
        assert!(scene.unique_instance("sheep").is_none());
        assert_eq!(scene.unique_instance("dog").unwrap().id, "m");
    }

    #[test]
    fn self_relations_are_preserved() {
        let parsed = doc(
            r#"{"i": {"width": 10, "height": 10, "objects": {
                "a": {"name": "man", "x": 0, "y": 0, "w": 2, "h": 2,
                      "relations": [{"name": "near", "object": "a"}]}
            }}}"#,
        );
        let triples = parsed.scenes["i"].relation_triples();
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0].subject_id, triples[0].object_id);
    }
}
