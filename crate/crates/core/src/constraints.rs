//! Ambiguity gates and bounding-box checks for spatial relations.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foil_sampler::{Noise, WeightedCandidates};
use crate::scene_graph::{canonical_token, BoundingBox, SceneGraph};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("class {0:?} is listed as both a body part and a background class")]
    Overlap(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AmbiguityLexicons {
    pub body_part_classes: BTreeSet<String>,
    pub background_classes: BTreeSet<String>,
}

fn parse_class_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| canonical_token(l.split('#').next().unwrap_or("")))
        .filter(|l| !l.is_empty())
        .collect()
}

impl AmbiguityLexicons {
    /// Builds lexicons from two one-class-per-line lists.
    pub fn parse(body_parts: &str, background: &str) -> Result<Self, LexiconError> {
        let lex = AmbiguityLexicons {
            body_part_classes: parse_class_list(body_parts),
            background_classes: parse_class_list(background),
        };
        if let Some(shared) = lex
            .body_part_classes
            .intersection(&lex.background_classes)
            .next()
        {
            return Err(LexiconError::Overlap(shared.clone()));
        }
        Ok(lex)
    }

    pub fn load(body_parts: &Path, background: &Path) -> Result<Self, LexiconError> {
        Self::parse(
            &fs::read_to_string(body_parts)?,
            &fs::read_to_string(background)?,
        )
    }

    pub fn bundled() -> Self {
        Self::parse(
            crate::assets::BODY_PART_CLASSES,
            crate::assets::BACKGROUND_CLASSES,
        )
        .expect("bundled lexicons are disjoint")
    }
}

/// True iff the class has more than one instance in the scene.
pub fn reference_is_ambiguous(scene: &SceneGraph, class_name: &str) -> bool {
    scene.instance_count(class_name) > 1
}

pub fn pair_is_bodyparts(class_a: &str, class_b: &str, lex: &AmbiguityLexicons) -> bool {
    lex.body_part_classes.contains(class_a) && lex.body_part_classes.contains(class_b)
}

pub fn involves_background(class_a: &str, class_b: &str, lex: &AmbiguityLexicons) -> bool {
    lex.background_classes.contains(class_a) || lex.background_classes.contains(class_b)
}

/// All three gates for a caption that relates `subject` and `object`.
pub fn relation_passes_gates(
    scene: &SceneGraph,
    subject: &str,
    object: &str,
    lex: &AmbiguityLexicons,
) -> bool {
    subject != object
        && !reference_is_ambiguous(scene, subject)
        && !reference_is_ambiguous(scene, object)
        && !pair_is_bodyparts(subject, object, lex)
        && !involves_background(subject, object, lex)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialVerdict {
    Holds,
    Contradicts,
    Unknown,
}

/// Predicates the geometric check understands.
pub const SPATIAL_PREDICATES: [&str; 11] = [
    "to the left of",
    "to the right of",
    "above",
    "below",
    "on top of",
    "under",
    "in front of",
    "behind",
    "near",
    "in",
    "inside",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryThresholds {
    /// Maximum overlap along the tested axis, as a fraction of the smaller
    /// extent, for a directional verdict to be decided.
    pub overlap_ratio: f64,
    /// "near" holds when the gap between boxes is below this fraction of the
    /// image diagonal.
    pub near_ratio: f64,
}

impl Default for GeometryThresholds {
    fn default() -> Self {
        GeometryThresholds {
            overlap_ratio: 0.3,
            near_ratio: 0.1,
        }
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Horizontal,
    Vertical,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

impl GeometryThresholds {
    /// Verdict for "`a` <predicate> `b`" on an axis: `Holds` when `a` comes
    /// first along the axis (left or top), `Contradicts` when it comes last,
    /// `Unknown` when the boxes overlap too much or share a center.
    fn ordered(&self, a: &BoundingBox, b: &BoundingBox, axis: Axis) -> SpatialVerdict {
        let (ca, cb, shared, min_extent) = match axis {
            Axis::Horizontal => (
                a.center_x(),
                b.center_x(),
                overlap(f64::from(a.x), a.right(), f64::from(b.x), b.right()),
                f64::from(a.w.min(b.w)),
            ),
            Axis::Vertical => (
                a.center_y(),
                b.center_y(),
                overlap(f64::from(a.y), a.bottom(), f64::from(b.y), b.bottom()),
                f64::from(a.h.min(b.h)),
            ),
        };
        if shared >= self.overlap_ratio * min_extent || ca == cb {
            SpatialVerdict::Unknown
        } else if ca < cb {
            SpatialVerdict::Holds
        } else {
            SpatialVerdict::Contradicts
        }
    }

    fn near(&self, a: &BoundingBox, b: &BoundingBox, diagonal: f64) -> SpatialVerdict {
        let gap_x = (f64::from(a.x.max(b.x)) - a.right().min(b.right())).max(0.0);
        let gap_y = (f64::from(a.y.max(b.y)) - a.bottom().min(b.bottom())).max(0.0);
        if gap_x.hypot(gap_y) < self.near_ratio * diagonal {
            SpatialVerdict::Holds
        } else {
            SpatialVerdict::Unknown
        }
    }

    /// Geometric verdict for "`a` <predicate> `b`". Unsupported predicates
    /// and depth predicates are `Unknown`.
    pub fn verdict(
        &self,
        a: &BoundingBox,
        b: &BoundingBox,
        predicate: &str,
        diagonal: f64,
    ) -> SpatialVerdict {
        match predicate {
            "to the left of" => self.ordered(a, b, Axis::Horizontal),
            "to the right of" => self.ordered(b, a, Axis::Horizontal),
            "above" | "on top of" => self.ordered(a, b, Axis::Vertical),
            "below" | "under" => self.ordered(b, a, Axis::Vertical),
            "near" => self.near(a, b, diagonal),
            _ => SpatialVerdict::Unknown,
        }
    }
}

/// Verdict with default thresholds. `diagonal` only matters for "near".
pub fn spatial_relation_verdict(
    a: &BoundingBox,
    b: &BoundingBox,
    predicate: &str,
    diagonal: f64,
) -> SpatialVerdict {
    GeometryThresholds::default().verdict(a, b, predicate, diagonal)
}

/// Which slot of an annotated triple is being replaced; the other two are
/// fixed object ids or a fixed predicate.
#[derive(Clone, Copy, Debug)]
pub enum SlotContext<'a> {
    Subject {
        predicate: &'a str,
        object_id: &'a str,
    },
    Object {
        subject_id: &'a str,
        predicate: &'a str,
    },
    Predicate {
        subject_id: &'a str,
        object_id: &'a str,
    },
}

/// Geometric verdict for the triple obtained by putting `candidate` into the
/// slot. Entity candidates are class names; every instance is checked and
/// the strongest verdict wins (`Holds` over `Contradicts` over `Unknown`).
pub fn substituted_verdict(
    scene: &SceneGraph,
    slot: SlotContext<'_>,
    candidate: &str,
    geometry: &GeometryThresholds,
) -> SpatialVerdict {
    let diagonal = scene.diagonal();
    let boxed = |id: &str| scene.object(id).map(|o| o.bbox);
    let mut verdicts = Vec::new();
    match slot {
        SlotContext::Predicate {
            subject_id,
            object_id,
        } => {
            if let (Some(a), Some(b)) = (boxed(subject_id), boxed(object_id)) {
                verdicts.push(geometry.verdict(&a, &b, candidate, diagonal));
            }
        }
        SlotContext::Subject {
            predicate,
            object_id,
        } => {
            if let Some(b) = boxed(object_id) {
                for id in scene.instances_of(candidate) {
                    let a = scene.objects[id].bbox;
                    verdicts.push(geometry.verdict(&a, &b, predicate, diagonal));
                }
            }
        }
        SlotContext::Object {
            subject_id,
            predicate,
        } => {
            if let Some(a) = boxed(subject_id) {
                for id in scene.instances_of(candidate) {
                    let b = scene.objects[id].bbox;
                    verdicts.push(geometry.verdict(&a, &b, predicate, diagonal));
                }
            }
        }
    }
    if verdicts.contains(&SpatialVerdict::Holds) {
        SpatialVerdict::Holds
    } else if verdicts.contains(&SpatialVerdict::Contradicts) {
        SpatialVerdict::Contradicts
    } else {
        SpatialVerdict::Unknown
    }
}

/// Clean mode drops every candidate whose substituted relation the boxes
/// show to be true; noisy mode returns the input unchanged.
pub fn filter_noisy_candidates(
    scene: &SceneGraph,
    slot: SlotContext<'_>,
    candidates: WeightedCandidates,
    noise: Noise,
    geometry: &GeometryThresholds,
) -> WeightedCandidates {
    match noise {
        Noise::Noisy => candidates,
        Noise::Clean => candidates.retain(|value| {
            substituted_verdict(scene, slot, value, geometry) != SpatialVerdict::Holds
        }),
    }
}
