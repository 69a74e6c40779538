use crate::labels::Tag;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub label: String,
    pub reason: &'static str,
}

/// IOB1 well-formedness: `B-X` may only appear directly after `I-X` or `B-X`,
/// where it separates two adjacent spans of the same type.
pub fn validate_iob<S: AsRef<str>>(labels: &[S]) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut prev: Option<Tag<'_>> = None;
    for (position, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        let Some(tag) = Tag::parse(label) else {
            violations.push(Violation {
                position,
                label: label.to_string(),
                reason: "not an IOB label",
            });
            prev = None;
            continue;
        };
        if let Tag::Begin(kind) = tag {
            let continues = prev.and_then(|p| p.entity_type()) == Some(kind);
            if !continues {
                violations.push(Violation {
                    position,
                    label: label.to_string(),
                    reason: "B- tag without a preceding span of the same type",
                });
            }
        }
        prev = Some(tag);
    }
    violations
}
