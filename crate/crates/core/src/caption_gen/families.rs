use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Bindings, CaptionPair, CaptionType, Generator, SkipReason};
use crate::constraints::{
    relation_passes_gates, reference_is_ambiguous, substituted_verdict, SlotContext,
    SpatialVerdict,
};
use crate::foil_sampler::{
    candidate_attributes, candidate_counts, candidate_entities, candidate_predicates, draw,
    FoilSlot, Infeasible, WeightedCandidates,
};
use crate::scene_graph::{RelationTriple, SceneGraph, SceneObject};

const XOR_NOTE: &str =
    "exclusive-or: the positive has exactly one true disjunct, the negative foils it so none holds";

/// A pair before realization.
struct Draft {
    slot: FoilSlot,
    key: String,
    positive: Bindings,
    negative: Bindings,
    verdict: Option<SpatialVerdict>,
    note: Option<&'static str>,
}

impl Draft {
    fn new(slot: FoilSlot, key: impl Into<String>, positive: Bindings, foil: &str) -> Self {
        let key = key.into();
        let mut negative = positive.clone();
        negative.insert(key.clone(), foil.to_string());
        Draft {
            slot,
            key,
            positive,
            negative,
            verdict: None,
            note: None,
        }
    }

    fn verdict(mut self, verdict: Option<SpatialVerdict>) -> Self {
        self.verdict = verdict;
        self
    }

    fn note(mut self, note: &'static str) -> Self {
        self.note = Some(note);
        self
    }
}

macro_rules! bindings {
    ($($key:expr => $value:expr),* $(,)?) => {{
        let mut b = Bindings::new();
        $(b.insert($key.to_string(), $value.to_string());)*
        b
    }};
}

/// A relational foil: the replaced slot, its new value and the geometric
/// verdict of the substituted relation.
struct RelationalFoil {
    slot: FoilSlot,
    value: String,
    verdict: SpatialVerdict,
}

fn slot_context(triple: &RelationTriple, slot: FoilSlot) -> SlotContext<'_> {
    match slot {
        FoilSlot::Subject => SlotContext::Subject {
            predicate: &triple.predicate,
            object_id: &triple.object_id,
        },
        FoilSlot::Object => SlotContext::Object {
            subject_id: &triple.subject_id,
            predicate: &triple.predicate,
        },
        _ => SlotContext::Predicate {
            subject_id: &triple.subject_id,
            object_id: &triple.object_id,
        },
    }
}

/// Takes anchors in order until `cap` of them produced drafts.
fn take_up_to<A>(
    anchors: Vec<A>,
    cap: u32,
    mut build: impl FnMut(A) -> Result<Vec<Draft>, Infeasible>,
) -> Result<Vec<Draft>, SkipReason> {
    if anchors.is_empty() {
        return Err(SkipReason::NoAnchor);
    }
    let mut drafts = Vec::new();
    let mut units = 0;
    for anchor in anchors {
        if units >= cap {
            break;
        }
        if let Ok(built) = build(anchor) {
            units += 1;
            drafts.extend(built);
        }
    }
    if drafts.is_empty() {
        Err(SkipReason::NoFoil)
    } else {
        Ok(drafts)
    }
}

impl Generator<'_> {
    fn finish(
        &self,
        scene: &SceneGraph,
        caption_type: CaptionType,
        drafts: Vec<Draft>,
    ) -> Vec<CaptionPair> {
        drafts
            .into_iter()
            .enumerate()
            .map(|(index, d)| CaptionPair {
                image_id: scene.image_id.clone(),
                caption_type,
                pair_index: index as u32,
                positive_text: self.realizer.realize(caption_type, &d.positive),
                negative_text: self.realizer.realize(caption_type, &d.negative),
                foil_slot: d.slot,
                original_value: d.positive[&d.key].clone(),
                foil_value: d.negative[&d.key].clone(),
                foiled_binding: d.key,
                spatial_verdict: d.verdict,
                positive_bindings: d.positive,
                negative_bindings: d.negative,
                note: d.note.map(str::to_string),
            })
            .collect()
    }

    fn cap(&self) -> u32 {
        self.config.max_pairs_per_type_per_image
    }

    fn pick<T: PartialEq + Clone>(&self, candidates: WeightedCandidates<T>, rng: &mut ChaCha8Rng) -> T {
        let candidates = candidates.weighted(self.config.weighting);
        draw(&candidates, rng).clone()
    }

    /// Objects whose class has a single instance in the scene.
    fn unambiguous_objects<'s>(&self, scene: &'s SceneGraph) -> Vec<&'s SceneObject> {
        scene
            .objects
            .values()
            .filter(|o| !reference_is_ambiguous(scene, &o.class_name))
            .collect()
    }

    /// Annotated relations that pass all three ambiguity gates.
    fn gated_triples(&self, scene: &SceneGraph) -> Vec<RelationTriple> {
        scene
            .relation_triples()
            .into_iter()
            .filter(|t| {
                let s = &scene.objects[&t.subject_id].class_name;
                let o = &scene.objects[&t.object_id].class_name;
                relation_passes_gates(scene, s, o, self.lexicons)
            })
            .collect()
    }

    fn attribute_foils(
        &self,
        true_attr: &str,
        object: &SceneObject,
    ) -> Result<WeightedCandidates, Infeasible> {
        candidate_attributes(
            true_attr,
            object,
            self.tables,
            self.clusters,
            self.config.regime,
        )
    }

    /// Admissible values for one slot of `triple`, restricted to values
    /// whose resulting caption still passes the ambiguity gates.
    fn relational_candidates(
        &self,
        scene: &SceneGraph,
        triple: &RelationTriple,
        slot: FoilSlot,
    ) -> Result<WeightedCandidates, Infeasible> {
        let regime = self.config.regime;
        let geometry = &self.config.geometry;
        match slot {
            FoilSlot::Predicate => {
                candidate_predicates(triple, scene, self.tables, regime, geometry)
            }
            FoilSlot::Subject | FoilSlot::Object => {
                let subject = &scene.objects[&triple.subject_id].class_name;
                let object = &scene.objects[&triple.object_id].class_name;
                candidate_entities(slot, triple, scene, self.tables, regime, geometry)?
                    .retain(|class| {
                        let (s, o) = match slot {
                            FoilSlot::Subject => (class.as_str(), object.as_str()),
                            _ => (subject.as_str(), class.as_str()),
                        };
                        relation_passes_gates(scene, s, o, self.lexicons)
                    })
                    .non_empty()
            }
            _ => Err(Infeasible),
        }
    }

    fn relational_foil(
        &self,
        scene: &SceneGraph,
        triple: &RelationTriple,
        slot: FoilSlot,
        rng: &mut ChaCha8Rng,
    ) -> Result<RelationalFoil, Infeasible> {
        let candidates = self.relational_candidates(scene, triple, slot)?;
        let value = self.pick(candidates, rng);
        let verdict = substituted_verdict(
            scene,
            slot_context(triple, slot),
            &value,
            &self.config.geometry,
        );
        Ok(RelationalFoil {
            slot,
            value,
            verdict,
        })
    }

    /// Tries the three relational slots in random order.
    fn any_relational_foil(
        &self,
        scene: &SceneGraph,
        triple: &RelationTriple,
        rng: &mut ChaCha8Rng,
    ) -> Result<RelationalFoil, Infeasible> {
        let mut slots = [FoilSlot::Subject, FoilSlot::Object, FoilSlot::Predicate];
        slots.shuffle(rng);
        slots
            .into_iter()
            .find_map(|slot| self.relational_foil(scene, triple, slot, rng).ok())
            .ok_or(Infeasible)
    }

    fn triple_classes<'s>(&self, scene: &'s SceneGraph, t: &'s RelationTriple) -> (&'s str, &'s str, &'s str) {
        (
            &scene.objects[&t.subject_id].class_name,
            &t.predicate,
            &scene.objects[&t.object_id].class_name,
        )
    }

    /// `attribute` and `attribute_relation`.
    pub fn instantiate_attribute_family(
        &self,
        scene: &SceneGraph,
        caption_type: CaptionType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CaptionPair>, SkipReason> {
        let drafts = match caption_type {
            CaptionType::Attribute => {
                let mut anchors: Vec<(&SceneObject, &str)> = self
                    .unambiguous_objects(scene)
                    .into_iter()
                    .flat_map(|o| o.attributes.iter().map(move |a| (o, a.as_str())))
                    .collect();
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |(object, attr)| {
                    let foil = self.pick(self.attribute_foils(attr, object)?, rng);
                    let positive = bindings! { "obj" => object.class_name, "attr" => attr };
                    Ok(vec![Draft::new(FoilSlot::Attribute, "attr", positive, &foil)])
                })?
            }
            CaptionType::AttributeRelation => {
                let triples = self.gated_triples(scene);
                let mut anchors: Vec<(&RelationTriple, &str)> = triples
                    .iter()
                    .flat_map(|t| {
                        scene.objects[&t.subject_id]
                            .attributes
                            .iter()
                            .map(move |a| (t, a.as_str()))
                    })
                    .collect();
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |(triple, attr)| {
                    let subject = &scene.objects[&triple.subject_id];
                    let foil = self.pick(self.attribute_foils(attr, subject)?, rng);
                    let (s, p, o) = self.triple_classes(scene, triple);
                    let positive = bindings! { "attr" => attr, "subj" => s, "pred" => p, "obj" => o };
                    Ok(vec![Draft::new(FoilSlot::Attribute, "attr", positive, &foil)])
                })?
            }
            other => panic!("{other} is not an attribute caption type"),
        };
        Ok(self.finish(scene, caption_type, drafts))
    }

    /// `relation` and `relation_attribute`.
    pub fn instantiate_relation_family(
        &self,
        scene: &SceneGraph,
        caption_type: CaptionType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CaptionPair>, SkipReason> {
        let triples = self.gated_triples(scene);
        let drafts = match caption_type {
            CaptionType::Relation => {
                let mut anchors: Vec<(&RelationTriple, FoilSlot)> = triples
                    .iter()
                    .flat_map(|t| {
                        [FoilSlot::Subject, FoilSlot::Object, FoilSlot::Predicate].map(|s| (t, s))
                    })
                    .collect();
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |(triple, slot)| {
                    let foil = self.relational_foil(scene, triple, slot, rng)?;
                    let (s, p, o) = self.triple_classes(scene, triple);
                    let positive = bindings! { "subj" => s, "pred" => p, "obj" => o };
                    let key = match slot {
                        FoilSlot::Subject => "subj",
                        FoilSlot::Object => "obj",
                        _ => "pred",
                    };
                    Ok(vec![Draft::new(foil.slot, key, positive, &foil.value)
                        .verdict(Some(foil.verdict))])
                })?
            }
            CaptionType::RelationAttribute => {
                // The attribute rides on the entity that stays fixed.
                let mut anchors: Vec<(&RelationTriple, FoilSlot, &str)> = Vec::new();
                for t in &triples {
                    for (slot, fixed_id) in [
                        (FoilSlot::Subject, &t.object_id),
                        (FoilSlot::Object, &t.subject_id),
                    ] {
                        for a in &scene.objects[fixed_id].attributes {
                            anchors.push((t, slot, a.as_str()));
                        }
                    }
                }
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |(triple, slot, attr)| {
                    let foil = self.relational_foil(scene, triple, slot, rng)?;
                    let (s, p, o) = self.triple_classes(scene, triple);
                    let mut positive = bindings! { "subj" => s, "pred" => p, "obj" => o };
                    let (key, attr_key) = match slot {
                        FoilSlot::Subject => ("subj", "obj_attr"),
                        _ => ("obj", "subj_attr"),
                    };
                    positive.insert(attr_key.to_string(), attr.to_string());
                    Ok(vec![Draft::new(foil.slot, key, positive, &foil.value)
                        .verdict(Some(foil.verdict))])
                })?
            }
            other => panic!("{other} is not a relation caption type"),
        };
        Ok(self.finish(scene, caption_type, drafts))
    }

    /// Classes eligible for counting captions.
    fn countable_classes<'s>(&self, scene: &'s SceneGraph) -> Vec<(&'s str, u32)> {
        scene
            .class_counts()
            .into_iter()
            .map(|(c, n)| (c, n as u32))
            .filter(|(c, n)| *n <= self.config.max_count && !self.lexicons.background_classes.contains(*c))
            .collect()
    }

    /// `object_count` and `object_compare_count`.
    pub fn instantiate_counting_family(
        &self,
        scene: &SceneGraph,
        caption_type: CaptionType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CaptionPair>, SkipReason> {
        let mut classes = self.countable_classes(scene);
        classes.shuffle(rng);
        let drafts = match caption_type {
            CaptionType::ObjectCount => take_up_to(classes, self.cap(), |(class, count)| {
                let candidates = candidate_counts(class, count, self.tables, self.config.max_count)
                    .non_empty()?;
                let foil = self.pick(candidates, rng);
                let positive = bindings! { "n" => count, "obj" => class };
                Ok(vec![Draft::new(FoilSlot::Count, "n", positive, &foil.to_string())])
            })?,
            CaptionType::ObjectCompareCount => self.compare_count_couples(classes, rng)?,
            other => panic!("{other} is not a counting caption type"),
        };
        Ok(self.finish(scene, caption_type, drafts))
    }

    /// Comparative pairs in couples that use every quantifier equally often
    /// in positives and negatives:
    /// - an unequal class pair in both orders: (more → fewer) + (fewer → more);
    /// - an equal pair with an unequal one: (as many → q) + (q → as many),
    ///   where q is the true comparative of the unequal pair.
    fn compare_count_couples(
        &self,
        classes: Vec<(&str, u32)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Draft>, SkipReason> {
        let mut unequal = Vec::new();
        let mut equal = Vec::new();
        for (i, a) in classes.iter().enumerate() {
            for b in &classes[i + 1..] {
                if a.1 == b.1 {
                    equal.push((*a, *b));
                } else {
                    unequal.push((*a, *b));
                }
            }
        }
        if unequal.is_empty() && equal.is_empty() {
            return Err(SkipReason::NoAnchor);
        }
        unequal.shuffle(rng);
        equal.shuffle(rng);

        let pair = |quant: &str, first: &str, second: &str, foil: &str| {
            let positive = bindings! { "quant" => quant, "obj1" => first, "obj2" => second };
            Draft::new(FoilSlot::ComparativeQuantifier, "quant", positive, foil)
        };
        let mut drafts = Vec::new();
        for _ in 0..self.cap() {
            let Some(((big, nb), (small, ns))) = unequal.pop().map(|(a, b)| if a.1 > b.1 { (a, b) } else { (b, a) }) else {
                break;
            };
            debug_assert!(nb > ns);
            if let Some(((c, _), (d, _))) = equal.pop() {
                let (c, d) = if rng.gen_bool(0.5) { (c, d) } else { (d, c) };
                // orient the unequal pair so its true comparative is `q`
                let (q, first, second) = if rng.gen_bool(0.5) {
                    ("more", big, small)
                } else {
                    ("fewer", small, big)
                };
                drafts.push(pair("as many", c, d, q));
                drafts.push(pair(q, first, second, "as many"));
            } else {
                drafts.push(pair("more", big, small, "fewer"));
                drafts.push(pair("fewer", small, big, "more"));
            }
        }
        if drafts.is_empty() {
            Err(SkipReason::Unbalanceable)
        } else {
            Ok(drafts)
        }
    }

    /// `verify_object_attribute` and `verify_object_relation`. Each anchor
    /// yields a couple: one pair with a true "at least one" positive and one
    /// with a true "no" positive.
    pub fn instantiate_existence_family(
        &self,
        scene: &SceneGraph,
        caption_type: CaptionType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CaptionPair>, SkipReason> {
        let flip = |positive: Bindings, polarity_true: &str| {
            let mut positive = positive;
            positive.insert("polarity".into(), polarity_true.into());
            let foil = if polarity_true == "no" { "at least one" } else { "no" };
            Draft::new(FoilSlot::ExistencePolarity, "polarity", positive, foil)
        };
        let drafts = match caption_type {
            CaptionType::VerifyObjectAttribute => {
                let mut anchors: Vec<(&SceneObject, &str)> = self
                    .unambiguous_objects(scene)
                    .into_iter()
                    .flat_map(|o| o.attributes.iter().map(move |a| (o, a.as_str())))
                    .collect();
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |(object, attr)| {
                    let absent = self.pick(self.attribute_foils(attr, object)?, rng);
                    let present = flip(bindings! { "obj" => object.class_name, "attr" => attr }, "at least one");
                    let missing = flip(bindings! { "obj" => object.class_name, "attr" => absent }, "no");
                    Ok(vec![present, missing])
                })?
            }
            CaptionType::VerifyObjectRelation => {
                let mut anchors = self.gated_triples(scene);
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |triple| {
                    let foil = self.any_relational_foil(scene, &triple, rng)?;
                    let (s, p, o) = self.triple_classes(scene, &triple);
                    let fact = bindings! { "subj" => s, "pred" => p, "obj" => o };
                    let mut absent = fact.clone();
                    let key = match foil.slot {
                        FoilSlot::Subject => "subj",
                        FoilSlot::Object => "obj",
                        _ => "pred",
                    };
                    absent.insert(key.into(), foil.value.clone());
                    Ok(vec![
                        flip(fact, "at least one"),
                        flip(absent, "no").verdict(Some(foil.verdict)),
                    ])
                })?
            }
            other => panic!("{other} is not an existence caption type"),
        };
        Ok(self.finish(scene, caption_type, drafts))
    }

    /// `AND_logic_*` and `XOR_logic_*`.
    pub fn instantiate_reasoning_family(
        &self,
        scene: &SceneGraph,
        caption_type: CaptionType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CaptionPair>, SkipReason> {
        let drafts = match caption_type {
            CaptionType::AndLogicAttribute | CaptionType::XorLogicAttribute => {
                let objects = self.unambiguous_objects(scene);
                let mut anchors: Vec<(&SceneObject, &SceneObject)> = Vec::new();
                for (i, a) in objects.iter().enumerate() {
                    for b in &objects[i + 1..] {
                        if a.class_name != b.class_name {
                            anchors.push((a, b));
                            anchors.push((b, a));
                        }
                    }
                }
                anchors.shuffle(rng);
                if caption_type == CaptionType::AndLogicAttribute {
                    take_up_to(anchors, self.cap(), |(first, second)| {
                        self.and_attribute(first, second, rng)
                    })?
                } else {
                    take_up_to(anchors, self.cap(), |(truthy, other)| {
                        self.xor_attribute(truthy, other, rng)
                    })?
                }
            }
            CaptionType::AndLogicRelation => {
                let triples = self.gated_triples(scene);
                let mut anchors: Vec<(&RelationTriple, &RelationTriple)> = Vec::new();
                for (i, a) in triples.iter().enumerate() {
                    for b in &triples[i + 1..] {
                        if self.triple_classes(scene, a) != self.triple_classes(scene, b) {
                            anchors.push((a, b));
                            anchors.push((b, a));
                        }
                    }
                }
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |(first, second)| {
                    let (s1, p1, o1) = self.triple_classes(scene, first);
                    let (s2, p2, o2) = self.triple_classes(scene, second);
                    let positive = bindings! {
                        "subj1" => s1, "pred1" => p1, "obj1" => o1,
                        "subj2" => s2, "pred2" => p2, "obj2" => o2,
                    };
                    let (foiled, suffix) = if rng.gen_bool(0.5) { (first, "1") } else { (second, "2") };
                    let foil = self.any_relational_foil(scene, foiled, rng)?;
                    let key = match foil.slot {
                        FoilSlot::Subject => format!("subj{suffix}"),
                        FoilSlot::Object => format!("obj{suffix}"),
                        _ => format!("pred{suffix}"),
                    };
                    // the foiled conjunct must not restate the other one
                    let mut negative = positive.clone();
                    negative.insert(key.clone(), foil.value.clone());
                    let restated = negative["subj1"] == negative["subj2"]
                        && negative["pred1"] == negative["pred2"]
                        && negative["obj1"] == negative["obj2"];
                    if restated {
                        return Err(Infeasible);
                    }
                    Ok(vec![Draft::new(foil.slot, key, positive, &foil.value).verdict(Some(foil.verdict))])
                })?
            }
            CaptionType::XorLogicRelation => {
                let mut anchors = self.gated_triples(scene);
                anchors.shuffle(rng);
                take_up_to(anchors, self.cap(), |triple| {
                    let candidates = self.relational_candidates(scene, &triple, FoilSlot::Object)?;
                    if candidates.len() < 2 {
                        return Err(Infeasible);
                    }
                    let false_object = self.pick(candidates.clone(), rng);
                    let rest = candidates.retain(|c| *c != false_object);
                    let foil = self.pick(rest, rng);
                    let verdict = substituted_verdict(
                        scene,
                        slot_context(&triple, FoilSlot::Object),
                        &foil,
                        &self.config.geometry,
                    );
                    let (s, p, o) = self.triple_classes(scene, &triple);
                    let (true_key, positive) = if rng.gen_bool(0.5) {
                        ("obj1", bindings! { "subj" => s, "pred" => p, "obj1" => o, "obj2" => false_object })
                    } else {
                        ("obj2", bindings! { "subj" => s, "pred" => p, "obj1" => false_object, "obj2" => o })
                    };
                    Ok(vec![Draft::new(FoilSlot::Object, true_key, positive, &foil)
                        .verdict(Some(verdict))
                        .note(XOR_NOTE)])
                })?
            }
            other => panic!("{other} is not a reasoning caption type"),
        };
        Ok(self.finish(scene, caption_type, drafts))
    }

    fn and_attribute(
        &self,
        first: &SceneObject,
        second: &SceneObject,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Draft>, Infeasible> {
        let a1 = first.attributes.choose(rng).ok_or(Infeasible)?;
        let a2 = second.attributes.choose(rng).ok_or(Infeasible)?;
        let positive = bindings! {
            "attr1" => a1, "obj1" => first.class_name,
            "attr2" => a2, "obj2" => second.class_name,
        };
        let (key, attr, object) = if rng.gen_bool(0.5) {
            ("attr1", a1, first)
        } else {
            ("attr2", a2, second)
        };
        let foil = self.pick(self.attribute_foils(attr, object)?, rng);
        Ok(vec![Draft::new(FoilSlot::Attribute, key, positive, &foil)])
    }

    /// `truthy` supplies the true disjunct; `other` a false one.
    fn xor_attribute(
        &self,
        truthy: &SceneObject,
        other: &SceneObject,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Draft>, Infeasible> {
        let true_attr = truthy.attributes.choose(rng).ok_or(Infeasible)?;
        let other_anchor = other.attributes.first().map_or("", String::as_str);
        let false_attr = self.pick(self.attribute_foils(other_anchor, other)?, rng);
        let foil = self.pick(self.attribute_foils(true_attr, truthy)?, rng);
        let (key, positive) = if rng.gen_bool(0.5) {
            (
                "attr1",
                bindings! {
                    "attr1" => true_attr, "obj1" => truthy.class_name,
                    "attr2" => false_attr, "obj2" => other.class_name,
                },
            )
        } else {
            (
                "attr2",
                bindings! {
                    "attr1" => false_attr, "obj1" => other.class_name,
                    "attr2" => true_attr, "obj2" => truthy.class_name,
                },
            )
        };
        Ok(vec![Draft::new(FoilSlot::Attribute, key, positive, &foil).note(XOR_NOTE)])
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::constraints::AmbiguityLexicons;
    use crate::corpus_stats::{build_tables, AttributeClusters};
    use crate::scene_graph::parse_scene_graphs;
    use std::collections::BTreeMap;

    /// Kitchen scene plus support scenes
    /// that put the needed co-occurrences into the tables.
    const KITCHEN: &str = r#"{
      "fig": {"width": 640, "height": 480, "objects": {
        "bowl": {"name": "bowl", "x": 300, "y": 300, "w": 60, "h": 30, "attributes": ["white"],
                 "relations": [{"name": "to the left of", "object": "cat"}]},
        "cat": {"name": "cat", "x": 450, "y": 280, "w": 80, "h": 60, "attributes": ["gray"],
                "relations": [{"name": "to the right of", "object": "bowl"}, {"name": "on", "object": "table"}]},
        "table": {"name": "table", "x": 250, "y": 330, "w": 320, "h": 140, "attributes": ["wooden"]},
        "door": {"name": "door", "x": 20, "y": 20, "w": 120, "h": 400, "attributes": ["white"]},
        "jar1": {"name": "jar", "x": 160, "y": 200, "w": 20, "h": 30,
                 "relations": [{"name": "to the left of", "object": "door"}]},
        "jar2": {"name": "jar", "x": 185, "y": 200, "w": 20, "h": 30},
        "apple1": {"name": "apple", "x": 600, "y": 100, "w": 10, "h": 10},
        "apple2": {"name": "apple", "x": 612, "y": 100, "w": 10, "h": 10},
        "apple3": {"name": "apple", "x": 624, "y": 100, "w": 10, "h": 10},
        "ear": {"name": "ear", "x": 460, "y": 280, "w": 8, "h": 8,
                "relations": [{"name": "to the left of", "object": "nose"}]},
        "nose": {"name": "nose", "x": 500, "y": 300, "w": 8, "h": 8}
      }},
      "support1": {"width": 640, "height": 480, "objects": {
        "b": {"name": "bowl", "x": 10, "y": 10, "w": 20, "h": 20, "attributes": ["teal"],
              "relations": [{"name": "to the right of", "object": "c"}]},
        "c": {"name": "cat", "x": 300, "y": 10, "w": 20, "h": 20, "attributes": ["black and white"],
              "relations": [{"name": "on", "object": "t"}]},
        "t": {"name": "table", "x": 250, "y": 30, "w": 200, "h": 100, "attributes": ["plastic"]},
        "j1": {"name": "jar", "x": 500, "y": 10, "w": 10, "h": 10},
        "j2": {"name": "jar", "x": 520, "y": 10, "w": 10, "h": 10},
        "j3": {"name": "jar", "x": 540, "y": 10, "w": 10, "h": 10}
      }},
      "support2": {"width": 640, "height": 480, "objects": {
        "d": {"name": "door", "x": 10, "y": 10, "w": 20, "h": 200, "attributes": ["metal"]},
        "b": {"name": "bowl", "x": 100, "y": 10, "w": 20, "h": 20,
              "relations": [{"name": "to the left of", "object": "t"}]},
        "t": {"name": "table", "x": 300, "y": 10, "w": 20, "h": 20,
              "relations": [{"name": "to the right of", "object": "c"}]},
        "c": {"name": "cat", "x": 200, "y": 10, "w": 20, "h": 20}
      }}
    }"#;

    struct Fixture {
        scenes: BTreeMap<String, SceneGraph>,
        tables: LookupTables,
        clusters: AttributeClusters,
        lexicons: AmbiguityLexicons,
        realizer: Realizer,
    }

    fn fixture() -> Fixture {
        let scenes = parse_scene_graphs(KITCHEN.as_bytes()).unwrap().scenes;
        let tables = build_tables(scenes.values()).unwrap();
        Fixture {
            scenes,
            tables,
            clusters: AttributeClusters::parse(crate::assets::ATTRIBUTE_CLUSTERS).unwrap(),
            lexicons: AmbiguityLexicons::bundled(),
            realizer: Realizer::bundled(),
        }
    }

    fn generator<'a>(f: &'a Fixture, config: &'a GenerationConfig) -> Generator<'a> {
        Generator {
            tables: &f.tables,
            clusters: &f.clusters,
            lexicons: &f.lexicons,
            config,
            realizer: &f.realizer,
        }
    }

    fn all_pairs(f: &Fixture, config: &GenerationConfig, seeds: u64) -> Vec<CaptionPair> {
        let mut out = Vec::new();
        for seed in 0..seeds {
            let config = GenerationConfig {
                global_seed: seed,
                ..config.clone()
            };
            out.extend(generator(f, &config).generate_for_image(&f.scenes["fig"]).pairs);
        }
        out
    }

    #[test]
    fn attribute_pair_from_kitchen_scene() {
        let f = fixture();
        let pairs = all_pairs(&f, &GenerationConfig::default(), 20);
        let bowl_attribute: Vec<_> = pairs
            .iter()
            .filter(|p| p.caption_type == CaptionType::Attribute && p.positive_bindings["obj"] == "bowl")
            .collect();
        assert!(!bowl_attribute.is_empty());
        for p in bowl_attribute {
            assert_eq!(p.positive_text, "The bowl is white.");
            assert_eq!(p.negative_text, "The bowl is teal.");
        }
    }

    #[test]
    fn attribute_relation_foils_cat_color() {
        let f = fixture();
        let pairs = all_pairs(&f, &GenerationConfig::default(), 30);
        assert!(pairs.iter().any(|p| p.caption_type == CaptionType::AttributeRelation
            && p.positive_text == "The gray cat is on the table."
            && p.negative_text == "The black and white cat is on the table."));
    }

    #[test]
    fn predicate_foil_for_bowl_and_cat() {
        let f = fixture();
        let pairs = all_pairs(&f, &GenerationConfig::default(), 40);
        assert!(pairs.iter().any(|p| p.caption_type == CaptionType::Relation
            && p.positive_text == "The bowl is to the left of the cat."
            && p.negative_text == "The bowl is to the right of the cat."));
    }

    #[test]
    fn gates_block_body_parts_and_plural_classes() {
        let f = fixture();
        let pairs = all_pairs(&f, &GenerationConfig::default(), 40);
        for p in pairs.iter().filter(|p| !p.caption_type.is_counting()) {
            for text in [&p.positive_text, &p.negative_text] {
                assert!(!text.contains("ear"), "{text}");
                assert!(!text.contains("jar"), "{text}");
                assert!(!text.contains("apple"), "{text}");
            }
        }
    }

    #[test]
    fn counting_captions() {
        let f = fixture();
        let config = GenerationConfig {
            max_pairs_per_type_per_image: 10,
            ..Default::default()
        };
        let pairs = all_pairs(&f, &config, 10);
        assert!(pairs.iter().any(|p| p.positive_text == "There are two jars."
            && p.negative_text == "There are three jars."));
        assert!(pairs.iter().any(|p| p.positive_text == "There are more apples than jars."
            || p.positive_text == "There are fewer jars than apples."));
        assert!(pairs.iter().any(|p| p.positive_text == "There are as many cats as bowls."
            || p.positive_text == "There are as many bowls as cats."));
        for p in pairs.iter().filter(|p| p.caption_type == CaptionType::ObjectCompareCount) {
            if p.positive_bindings["quant"] == "as many" {
                assert!(["fewer", "more"].contains(&p.foil_value.as_str()));
            }
        }
    }

    #[test]
    fn existence_captions_from_kitchen() {
        let f = fixture();
        let config = GenerationConfig {
            max_pairs_per_type_per_image: 5,
            ..Default::default()
        };
        let pairs = all_pairs(&f, &config, 30);
        assert!(pairs.iter().any(|p| p.positive_text == "There is no table that is plastic."
            && p.negative_text == "There is at least one table that is plastic."));
        assert!(pairs.iter().any(|p| p.positive_text
            == "There is at least one bowl that is to the left of the cat."));
    }

    #[test]
    fn and_attribute_foils_one_conjunct() {
        let f = fixture();
        let config = GenerationConfig {
            max_pairs_per_type_per_image: 10,
            ..Default::default()
        };
        let pairs = all_pairs(&f, &config, 30);
        assert!(pairs.iter().any(|p| p.positive_text == "There are both a white door and a teal bowl."
            || p.negative_text == "There are both a metal door and a white bowl."));
        for p in pairs.iter().filter(|p| p.caption_type.category() == Category::Reasoning) {
            assert_eq!(p.differing_slots().len(), 1, "{p:?}");
        }
    }

    #[test]
    fn every_pair_is_minimal() {
        let f = fixture();
        for regime in SamplingRegime::ALL {
            let config = GenerationConfig {
                regime,
                max_pairs_per_type_per_image: 3,
                ..Default::default()
            };
            for p in all_pairs(&f, &config, 10) {
                assert_eq!(p.differing_slots(), vec![p.foiled_binding.as_str()]);
                assert_ne!(p.positive_text, p.negative_text);
                assert_eq!(p.original_value, p.positive_bindings[&p.foiled_binding]);
                assert_eq!(p.foil_value, p.negative_bindings[&p.foiled_binding]);
            }
        }
    }

    #[test]
    fn lonely_object_skips_all_types() {
        let scenes = parse_scene_graphs(
            br#"{"x": {"width": 10, "height": 10, "objects": {
                "1": {"name": "sky", "x": 0, "y": 0, "w": 10, "h": 10}}}}"#,
        )
        .unwrap()
        .scenes;
        let f = Fixture {
            tables: build_tables(scenes.values()).unwrap(),
            scenes,
            clusters: AttributeClusters::default(),
            lexicons: AmbiguityLexicons::bundled(),
            realizer: Realizer::bundled(),
        };
        let config = GenerationConfig::default();
        let out = generator(&f, &config).generate_for_image(&f.scenes["x"]);
        assert!(out.pairs.is_empty());
        assert_eq!(out.skips.len(), 12);
    }

    #[test]
    fn output_is_deterministic() {
        let f = fixture();
        let config = GenerationConfig {
            global_seed: 11,
            max_pairs_per_type_per_image: 4,
            ..Default::default()
        };
        let a = generator(&f, &config).generate_for_image(&f.scenes["fig"]);
        let b = generator(&f, &config).generate_for_image(&f.scenes["fig"]);
        assert_eq!(a, b);
    }
}
