use serde::{Deserialize, Serialize};

use super::{CaptionPair, CaptionType, POLARITIES, QUANTIFIERS};

/// How often one template value appears in positives and in negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueBalance {
    pub value: String,
    pub positive: u64,
    pub negative: u64,
}

impl ValueBalance {
    pub fn delta(&self) -> i64 {
        self.positive as i64 - self.negative as i64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub quantifiers: Vec<ValueBalance>,
    pub polarities: Vec<ValueBalance>,
}

impl BalanceReport {
    /// Every quantifier and polarity occurs equally often on both sides.
    pub fn is_balanced(&self) -> bool {
        self.quantifiers
            .iter()
            .chain(&self.polarities)
            .all(|v| v.delta() == 0)
    }
}

fn tally(pairs: &[CaptionPair], caption_type: CaptionType, slot: &str, values: &[&str]) -> Vec<ValueBalance> {
    values
        .iter()
        .map(|value| {
            let count = |side: fn(&CaptionPair) -> &super::Bindings| {
                pairs
                    .iter()
                    .filter(|p| p.caption_type == caption_type)
                    .filter(|p| side(p).get(slot).is_some_and(|v| v == value))
                    .count() as u64
            };
            ValueBalance {
                value: value.to_string(),
                positive: count(|p| &p.positive_bindings),
                negative: count(|p| &p.negative_bindings),
            }
        })
        .collect()
}

/// Counts quantifier and polarity values on each side of `pairs`.
pub fn verify_balance(pairs: &[CaptionPair]) -> BalanceReport {
    BalanceReport {
        quantifiers: tally(pairs, CaptionType::ObjectCompareCount, "quant", &QUANTIFIERS),
        polarities: tally(
            pairs,
            CaptionType::VerifyObjectAttribute,
            "polarity",
            &POLARITIES,
        )
        .into_iter()
        .zip(tally(pairs, CaptionType::VerifyObjectRelation, "polarity", &POLARITIES))
        .map(|(a, b)| ValueBalance {
            value: a.value,
            positive: a.positive + b.positive,
            negative: a.negative + b.negative,
        })
        .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foil_sampler::FoilSlot;

    fn pair(caption_type: CaptionType, slot: &str, pos: &str, neg: &str) -> CaptionPair {
        CaptionPair {
            image_id: "i".into(),
            caption_type,
            pair_index: 0,
            positive_text: String::new(),
            negative_text: String::new(),
            foil_slot: FoilSlot::ComparativeQuantifier,
            foiled_binding: slot.into(),
            original_value: pos.into(),
            foil_value: neg.into(),
            spatial_verdict: None,
            positive_bindings: [(slot.to_string(), pos.to_string())].into(),
            negative_bindings: [(slot.to_string(), neg.to_string())].into(),
            note: None,
        }
    }

    #[test]
    fn mirrored_couples_balance() {
        let pairs = vec![
            pair(CaptionType::ObjectCompareCount, "quant", "more", "fewer"),
            pair(CaptionType::ObjectCompareCount, "quant", "fewer", "more"),
            pair(CaptionType::ObjectCompareCount, "quant", "as many", "more"),
            pair(CaptionType::ObjectCompareCount, "quant", "more", "as many"),
            pair(CaptionType::VerifyObjectRelation, "polarity", "no", "at least one"),
            pair(CaptionType::VerifyObjectAttribute, "polarity", "at least one", "no"),
        ];
        let report = verify_balance(&pairs);
        assert!(report.is_balanced(), "{report:?}");
        let more = &report.quantifiers[1];
        assert_eq!((more.positive, more.negative), (2, 2));
    }

    #[test]
    fn lone_pair_is_unbalanced() {
        let report = verify_balance(&[pair(CaptionType::VerifyObjectAttribute, "polarity", "no", "at least one")]);
        assert!(!report.is_balanced());
        assert_eq!(report.polarities[0].delta(), 1);
    }
}
