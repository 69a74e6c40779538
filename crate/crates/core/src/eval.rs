//! Entity-level precision/recall/F1 with conlleval IOB1 chunk semantics, plus
//! token accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labels::Tag;

/// Inclusive token span of one entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

pub type SpanSet = BTreeSet<Span>;

/// Chunks of an IOB1 label sequence. A run of `I-X` is one span; `B-X` always
/// closes whatever is open and starts a new span of type `X`; `I-X` after a
/// span of another type also starts a new span.
pub fn extract_spans<S: AsRef<str>>(labels: &[S]) -> SpanSet {
    let mut spans = SpanSet::new();
    let mut open: Option<(usize, &str)> = None;
    for (t, label) in labels.iter().enumerate() {
        let tag = Tag::parse(label.as_ref()).unwrap_or(Tag::Outside);
        let starts = match (tag, open) {
            (Tag::Outside, _) => None,
            (Tag::Inside(kind), Some((_, cur))) if cur == kind => continue,
            (Tag::Inside(kind), _) | (Tag::Begin(kind), _) => Some(kind),
        };
        if let Some((start, kind)) = open.take() {
            spans.insert(Span {
                start,
                end: t - 1,
                kind: kind.to_string(),
            });
        }
        open = starts.map(|kind| (t, kind));
    }
    if let Some((start, kind)) = open {
        spans.insert(Span {
            start,
            end: labels.len() - 1,
            kind: kind.to_string(),
        });
    }
    spans
}

/// Renders non-overlapping spans back to IOB1 labels over `len` tokens.
pub fn render_spans(spans: &SpanSet, len: usize) -> Vec<String> {
    let mut labels = vec!["O".to_string(); len];
    let mut prev: Option<&Span> = None;
    for span in spans {
        let adjacent = prev.is_some_and(|p| p.end + 1 == span.start && p.kind == span.kind);
        for (t, label) in labels.iter_mut().enumerate().take(span.end + 1).skip(span.start) {
            let prefix = if t == span.start && adjacent { "B" } else { "I" };
            *label = format!("{prefix}-{}", span.kind);
        }
        prev = Some(span);
    }
    labels
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl SpanCounts {
    /// Percentages `(P, R, F1)`. With no gold and no predicted spans all three
    /// are 100; otherwise an empty denominator gives 0.
    pub fn prf(&self) -> (f64, f64, f64) {
        if self.gold == 0 && self.predicted == 0 {
            return (100.0, 100.0, 100.0);
        }
        let p = if self.predicted == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.predicted as f64
        };
        let r = if self.gold == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.gold as f64
        };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Token accuracy in percent.
    pub accuracy: f64,
    pub tokens: usize,
    pub correct_tokens: usize,
    pub overall: SpanCounts,
    pub per_type: BTreeMap<String, SpanCounts>,
}

impl Scores {
    /// conlleval-like plain-text report: overall line, then one line per type.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "processed {} tokens with {} phrases; found: {} phrases; correct: {}.",
            self.tokens, self.overall.gold, self.overall.predicted, self.overall.correct
        );
        let _ = writeln!(
            out,
            "accuracy: {:6.2}%; precision: {:6.2}%; recall: {:6.2}%; FB1: {:6.2}",
            self.accuracy, self.precision, self.recall, self.f1
        );
        for (kind, counts) in &self.per_type {
            let (p, r, f) = counts.prf();
            let _ = writeln!(
                out,
                "{kind:>17}: precision: {p:6.2}%; recall: {r:6.2}%; FB1: {f:6.2}  {}",
                counts.predicted
            );
        }
        out
    }
}

/// Scores predicted label sequences against gold ones of identical shape.
pub fn score<G, P>(gold: &[G], predicted: &[P]) -> Result<Scores>
where
    G: AsRef<[String]>,
    P: AsRef<[String]>,
{
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            got: predicted.len(),
        });
    }
    let mut overall = SpanCounts::default();
    let mut per_type: BTreeMap<String, SpanCounts> = BTreeMap::new();
    let (mut tokens, mut correct_tokens) = (0, 0);
    for (g, p) in gold.iter().zip(predicted) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() {
            return Err(Error::LengthMismatch {
                expected: g.len(),
                got: p.len(),
            });
        }
        tokens += g.len();
        correct_tokens += g.iter().zip(p).filter(|(a, b)| a == b).count();
        let gs = extract_spans(g);
        let ps = extract_spans(p);
        for s in &gs {
            per_type.entry(s.kind.clone()).or_default().gold += 1;
        }
        for s in &ps {
            per_type.entry(s.kind.clone()).or_default().predicted += 1;
        }
        for s in gs.intersection(&ps) {
            per_type.entry(s.kind.clone()).or_default().correct += 1;
        }
        overall.gold += gs.len();
        overall.predicted += ps.len();
        overall.correct += gs.intersection(&ps).count();
    }
    let (precision, recall, f1) = overall.prf();
    let accuracy = if tokens == 0 {
        100.0
    } else {
        100.0 * correct_tokens as f64 / tokens as f64
    };
    Ok(Scores {
        precision,
        recall,
        f1,
        accuracy,
        tokens,
        correct_tokens,
        overall,
        per_type,
    })
}
