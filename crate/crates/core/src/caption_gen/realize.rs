//! English surface realization for the caption templates.

use std::collections::BTreeMap;

use super::{Bindings, CaptionType};

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty",
];

pub fn number_word(n: u32) -> String {
    NUMBER_WORDS
        .get(n as usize)
        .map_or_else(|| n.to_string(), |w| (*w).to_string())
}

/// Pluralization and agreement rules.
#[derive(Clone, Debug)]
pub struct Realizer {
    exceptions: BTreeMap<String, String>,
}

impl Default for Realizer {
    fn default() -> Self {
        Self::bundled()
    }
}

impl Realizer {
    /// Reads `singular plural` lines; `#` starts a comment.
    pub fn with_exceptions(table: &str) -> Self {
        let exceptions = table
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter_map(|l| {
                let mut words = l.split_whitespace();
                Some((words.next()?.to_string(), words.next()?.to_string()))
            })
            .collect();
        Realizer { exceptions }
    }

    pub fn bundled() -> Self {
        Self::with_exceptions(crate::assets::PLURAL_EXCEPTIONS)
    }

    fn plural_word(&self, word: &str) -> String {
        if let Some(plural) = self.exceptions.get(word) {
            return plural.clone();
        }
        let bytes = word.as_bytes();
        let last = bytes.last().copied().unwrap_or(b' ');
        let before_last = bytes.len().checked_sub(2).map(|i| bytes[i]);
        let vowel = |c: u8| b"aeiou".contains(&c);
        if word.ends_with("ch") || word.ends_with("sh") || matches!(last, b's' | b'x' | b'z') {
            format!("{word}es")
        } else if last == b'y' && before_last.is_some_and(|c| !vowel(c)) {
            format!("{}ies", &word[..word.len() - 1])
        } else {
            format!("{word}s")
        }
    }

    /// Plural of a class name; multi-word names inflect their last word.
    pub fn plural(&self, noun: &str) -> String {
        match noun.rsplit_once(' ') {
            Some((head, last)) => format!("{head} {}", self.plural_word(last)),
            None => self.plural_word(noun),
        }
    }

    /// Nouns that are grammatically plural in the singular ("jeans").
    pub fn is_plural_only(&self, noun: &str) -> bool {
        let last = noun.rsplit(' ').next().unwrap_or(noun);
        self.exceptions
            .get(last)
            .is_some_and(|p| p == last && last.ends_with('s'))
    }

    /// "is" or "are" for a single referent named by `noun`.
    pub fn copula(&self, noun: &str) -> &'static str {
        if self.is_plural_only(noun) {
            "are"
        } else {
            "is"
        }
    }

    /// Indefinite noun phrase: "an apple", "a white door", "some jeans".
    pub fn indefinite(&self, modifier: Option<&str>, noun: &str) -> String {
        let phrase = match modifier {
            Some(m) => format!("{m} {noun}"),
            None => noun.to_string(),
        };
        let article = if self.is_plural_only(noun) {
            "some"
        } else if phrase.starts_with(['a', 'e', 'i', 'o', 'u']) {
            "an"
        } else {
            "a"
        };
        format!("{article} {phrase}")
    }

    /// Renders `caption_type` with `bindings`.
    ///
    /// Panics when a required binding is missing.
    pub fn realize(&self, caption_type: CaptionType, bindings: &Bindings) -> String {
        let get = |slot: &str| -> &str {
            bindings
                .get(slot)
                .map(String::as_str)
                .unwrap_or_else(|| panic!("{caption_type} caption is missing binding {slot:?}"))
        };
        let opt = |slot: &str| bindings.get(slot).map(String::as_str);
        let modified = |modifier: Option<&str>, noun: &str| match modifier {
            Some(m) => format!("{m} {noun}"),
            None => noun.to_string(),
        };

        let body = match caption_type {
            CaptionType::Attribute => {
                let obj = get("obj");
                format!("the {obj} {} {}", self.copula(obj), get("attr"))
            }
            CaptionType::AttributeRelation => {
                let subj = get("subj");
                format!(
                    "the {} {subj} {} {} the {}",
                    get("attr"),
                    self.copula(subj),
                    get("pred"),
                    get("obj")
                )
            }
            CaptionType::Relation | CaptionType::RelationAttribute => {
                let subj = get("subj");
                format!(
                    "the {} {} {} the {}",
                    modified(opt("subj_attr"), subj),
                    self.copula(subj),
                    get("pred"),
                    modified(opt("obj_attr"), get("obj"))
                )
            }
            CaptionType::ObjectCount => {
                let n: u32 = get("n").parse().expect("count binding is numeric");
                let obj = get("obj");
                if n == 1 {
                    format!("there is one {obj}")
                } else {
                    format!("there are {} {}", number_word(n), self.plural(obj))
                }
            }
            CaptionType::ObjectCompareCount => {
                let quant = get("quant");
                let joiner = if quant == "as many" { "as" } else { "than" };
                format!(
                    "there are {quant} {} {joiner} {}",
                    self.plural(get("obj1")),
                    self.plural(get("obj2"))
                )
            }
            CaptionType::VerifyObjectAttribute => {
                format!(
                    "there is {} {} that is {}",
                    get("polarity"),
                    get("obj"),
                    get("attr")
                )
            }
            CaptionType::VerifyObjectRelation => format!(
                "there is {} {} that is {} the {}",
                get("polarity"),
                get("subj"),
                get("pred"),
                get("obj")
            ),
            CaptionType::AndLogicAttribute => format!(
                "there are both {} and {}",
                self.indefinite(Some(get("attr1")), get("obj1")),
                self.indefinite(Some(get("attr2")), get("obj2"))
            ),
            CaptionType::AndLogicRelation => format!(
                "there are both {} {} the {} and {} {} the {}",
                self.indefinite(None, get("subj1")),
                get("pred1"),
                get("obj1"),
                self.indefinite(None, get("subj2")),
                get("pred2"),
                get("obj2")
            ),
            CaptionType::XorLogicAttribute => format!(
                "there is either {} or {}",
                self.indefinite(Some(get("attr1")), get("obj1")),
                self.indefinite(Some(get("attr2")), get("obj2"))
            ),
            CaptionType::XorLogicRelation => {
                let subj = get("subj");
                format!(
                    "the {subj} {} {} either the {} or the {}",
                    self.copula(subj),
                    get("pred"),
                    get("obj1"),
                    get("obj2")
                )
            }
        };
        sentence(&body)
    }
}

fn sentence(body: &str) -> String {
    let mut chars = body.chars();
    match chars.next() {
        Some(first) => format!("{}{}.", first.to_uppercase(), chars.as_str()),
        None => String::from("."),
    }
}
