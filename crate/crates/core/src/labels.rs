//! Output label inventory.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Labels of the CoNLL-2003 IOB1 task, in canonical index order.
pub const CONLL2003_LABELS: [&str; 8] = [
    "O", "I-PER", "I-LOC", "I-ORG", "I-MISC", "B-LOC", "B-ORG", "B-MISC",
];

const ENTITY_TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];

/// Ordered, duplicate-free list of label names with an index ↔ name bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("label set must be non-empty".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        let mut owned = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref().to_string();
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate label `{name}`")));
            }
            owned.push(name);
        }
        Ok(Self {
            names: owned,
            index,
        })
    }

    pub fn conll2003() -> Self {
        Self::new(&CONLL2003_LABELS).expect("static label set is valid")
    }

    /// Label set restricted to the labels that occur in `labels`, ordered as in
    /// [`CONLL2003_LABELS`] with any other labels (e.g. `B-PER`) after them in
    /// lexicographic order. `O` is always present.
    pub fn observed<'a, I>(labels: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen: Vec<&str> = labels.into_iter().collect();
        seen.push("O");
        seen.sort_unstable();
        seen.dedup();
        let rank = |l: &str| {
            CONLL2003_LABELS
                .iter()
                .position(|c| *c == l)
                .unwrap_or(CONLL2003_LABELS.len())
        };
        seen.sort_by(|a, b| rank(a).cmp(&rank(b)).then(a.cmp(b)));
        Self::new(&seen).expect("deduplicated labels are unique")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.index_of(l.as_ref())
                    .ok_or_else(|| Error::UnknownLabel(l.as_ref().to_string()))
            })
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.names[i].clone()).collect()
    }
}

/// IOB decomposition of a label string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Inside(&'a str),
    Begin(&'a str),
}

impl<'a> Tag<'a> {
    /// Parses `O`, `I-X` or `B-X`. Anything else is `None`.
    pub fn parse(label: &'a str) -> Option<Self> {
        if label == "O" {
            return Some(Tag::Outside);
        }
        let (prefix, kind) = label.split_once('-')?;
        if kind.is_empty() {
            return None;
        }
        match prefix {
            "I" => Some(Tag::Inside(kind)),
            "B" => Some(Tag::Begin(kind)),
            _ => None,
        }
    }

    pub fn entity_type(&self) -> Option<&'a str> {
        match *self {
            Tag::Outside => None,
            Tag::Inside(t) | Tag::Begin(t) => Some(t),
        }
    }
}

/// True for labels in the CoNLL-2003 IOB1 universe: `O`, or `I-`/`B-` followed by
/// one of PER, LOC, ORG, MISC.
pub fn is_conll_label(label: &str) -> bool {
    match Tag::parse(label) {
        Some(Tag::Outside) => true,
        Some(tag) => tag.entity_type().is_some_and(|t| ENTITY_TYPES.contains(&t)),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conll_set_has_eight_labels() {
        let set = LabelSet::conll2003();
        assert_eq!(set.len(), 8);
        assert_eq!(set.index_of("O"), Some(0));
        assert_eq!(set.index_of("B-PER"), None);
        for (i, name) in set.names().iter().enumerate() {
            assert_eq!(set.index_of(name), Some(i));
        }
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(LabelSet::new(&["O", "O"]).is_err());
        assert!(LabelSet::new::<&str>(&[]).is_err());
    }

    #[test]
    fn observed_uses_canonical_order() {
        let set = LabelSet::observed(["I-MISC", "O", "I-MISC", "B-PER", "I-PER"]);
        assert_eq!(set.names(), &["O", "I-PER", "I-MISC", "B-PER"]);
        let set = LabelSet::observed(["I-MISC"]);
        assert_eq!(set.names(), &["O", "I-MISC"]);
    }

    #[test]
    fn tag_parsing() {
        assert_eq!(Tag::parse("O"), Some(Tag::Outside));
        assert_eq!(Tag::parse("I-LOC"), Some(Tag::Inside("LOC")));
        assert_eq!(Tag::parse("B-ORG"), Some(Tag::Begin("ORG")));
        assert_eq!(Tag::parse("E-ORG"), None);
        assert_eq!(Tag::parse("I-"), None);
        assert!(is_conll_label("B-PER"));
        assert!(!is_conll_label("I-DATE"));
    }
}
