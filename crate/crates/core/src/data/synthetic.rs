//! Bracket-memory sequence task.
//!
//! Sentences mix filler words, the ambiguous token `x`, and non-nesting
//! `(` … `)` regions. An `x` inside a region is `I-MISC`, every other token is
//! `O`. Since brackets themselves are `O`, nothing about a single token or a
//! first-order chain over the two labels reveals whether an `x` sits inside a
//! region; the tagger has to carry that bit in its hidden state.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TokenSequence;
use crate::error::{Error, Result};

pub const INSIDE_LABEL: &str = "I-MISC";
pub const OUTSIDE_LABEL: &str = "O";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub fillers: Vec<String>,
    pub open: String,
    pub close: String,
    pub ambiguous: String,
    /// Inclusive sentence length range.
    pub min_len: usize,
    pub max_len: usize,
    /// Inclusive range for the number of bracket pairs.
    pub min_pairs: usize,
    pub max_pairs: usize,
    /// Probability that a non-bracket position inside a region holds `x`.
    pub p_ambiguous_inside: f64,
    /// Probability that a non-bracket position outside every region holds `x`.
    pub p_ambiguous_outside: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        let fillers = [
            "the", "of", "and", "to", "was", "for", "on", "with", "by", "at", "from", "said",
        ];
        Self {
            fillers: fillers.iter().map(|s| s.to_string()).collect(),
            open: "(".into(),
            close: ")".into(),
            ambiguous: "x".into(),
            min_len: 8,
            max_len: 24,
            min_pairs: 0,
            max_pairs: 3,
            p_ambiguous_inside: 0.35,
            p_ambiguous_outside: 0.35,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic task: {m}")));
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("length range {}..={}", self.min_len, self.max_len));
        }
        if self.min_pairs > self.max_pairs {
            return bad(format!("pair range {}..={}", self.min_pairs, self.max_pairs));
        }
        if 2 * self.min_pairs > self.min_len {
            return bad(format!(
                "{} pairs do not fit in {} tokens",
                self.min_pairs, self.min_len
            ));
        }
        for p in [self.p_ambiguous_inside, self.p_ambiguous_outside] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        let needs_fillers = self.p_ambiguous_inside < 1.0 || self.p_ambiguous_outside < 1.0;
        if needs_fillers && self.fillers.is_empty() {
            return bad("no filler tokens".into());
        }
        let specials = [&self.open, &self.close, &self.ambiguous];
        if self.fillers.iter().any(|f| specials.contains(&f)) || self.open == self.close {
            return bad("filler and marker tokens must be distinct".into());
        }
        Ok(())
    }
}

/// Gold labels for a token sequence under the bracket rule.
pub fn label_synthetic<S: AsRef<str>>(tokens: &[S], spec: &SyntheticTaskSpec) -> Vec<String> {
    let mut inside = false;
    tokens
        .iter()
        .map(|tok| {
            let tok = tok.as_ref();
            if tok == spec.open {
                inside = true;
            } else if tok == spec.close {
                inside = false;
            } else if tok == spec.ambiguous && inside {
                return INSIDE_LABEL.to_string();
            }
            OUTSIDE_LABEL.to_string()
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticTaskSpec, count: usize) -> Result<Vec<TokenSequence>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Config("synthetic corpus size must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..count)
        .map(|_| {
            let tokens = generate_tokens(spec, &mut rng);
            let labels = label_synthetic(&tokens, spec);
            TokenSequence::new(tokens, Some(labels))
        })
        .collect()
}

fn generate_tokens(spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let max_pairs = spec.max_pairs.min(len / 2);
    let pairs = rng.random_range(spec.min_pairs..=max_pairs);
    let mut marks = sample(rng, len, 2 * pairs).into_vec();
    marks.sort_unstable();

    let mut tokens = Vec::with_capacity(len);
    let mut next_mark = 0;
    let mut inside = false;
    for pos in 0..len {
        if next_mark < marks.len() && marks[next_mark] == pos {
            inside = next_mark % 2 == 0;
            tokens.push(if inside { &spec.open } else { &spec.close }.clone());
            next_mark += 1;
            continue;
        }
        let p = if inside {
            spec.p_ambiguous_inside
        } else {
            spec.p_ambiguous_outside
        };
        if rng.random_bool(p) {
            tokens.push(spec.ambiguous.clone());
        } else {
            let i = rng.random_range(0..spec.fillers.len());
            tokens.push(spec.fillers[i].clone());
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_iob;

    #[test]
    fn labeling_rule() {
        let spec = SyntheticTaskSpec::default();
        assert_eq!(
            label_synthetic(&["(", "a", "x", ")", "x"], &spec),
            vec!["O", "O", "I-MISC", "O", "O"]
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticTaskSpec::with_seed(7);
        let a = generate_synthetic(&spec, 50).unwrap();
        let b = generate_synthetic(&spec, 50).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticTaskSpec::with_seed(8), 50).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn markers_never_nest_and_labels_are_valid() {
        let spec = SyntheticTaskSpec::with_seed(3);
        for seq in generate_synthetic(&spec, 500).unwrap() {
            let mut depth = 0i32;
            for tok in &seq.tokens {
                if tok == "(" {
                    depth += 1;
                } else if tok == ")" {
                    depth -= 1;
                }
                assert!((0..=1).contains(&depth));
            }
            assert_eq!(depth, 0);
            assert!((spec.min_len..=spec.max_len).contains(&seq.len()));
            assert!(validate_iob(seq.labels.as_ref().unwrap()).is_empty());
        }
    }

    #[test]
    fn infeasible_specs() {
        let mut spec = SyntheticTaskSpec {
            min_pairs: 5,
            max_pairs: 5,
            min_len: 8,
            ..SyntheticTaskSpec::default()
        };
        assert!(generate_synthetic(&spec, 1).is_err());
        spec = SyntheticTaskSpec {
            p_ambiguous_inside: 1.5,
            ..SyntheticTaskSpec::default()
        };
        assert!(spec.validate().is_err());
        spec = SyntheticTaskSpec {
            min_len: 10,
            max_len: 9,
            ..SyntheticTaskSpec::default()
        };
        assert!(spec.validate().is_err());
        assert!(generate_synthetic(&SyntheticTaskSpec::default(), 0).is_err());
    }

    /// Per-position `x` rates stay within three binomial standard deviations
    /// of the configured probabilities.
    #[test]
    fn ambiguous_rates_match_configuration() {
        let spec = SyntheticTaskSpec {
            p_ambiguous_inside: 0.6,
            p_ambiguous_outside: 0.2,
            seed: 99,
            ..SyntheticTaskSpec::default()
        };
        let corpus = generate_synthetic(&spec, 10_000).unwrap();
        let (mut in_x, mut in_n, mut out_x, mut out_n) = (0u64, 0u64, 0u64, 0u64);
        for seq in &corpus {
            let mut inside = false;
            for tok in &seq.tokens {
                match tok.as_str() {
                    "(" => inside = true,
                    ")" => inside = false,
                    t => {
                        let is_x = (t == "x") as u64;
                        if inside {
                            in_x += is_x;
                            in_n += 1;
                        } else {
                            out_x += is_x;
                            out_n += 1;
                        }
                    }
                }
            }
        }
        for (hits, n, p) in [(in_x, in_n, 0.6), (out_x, out_n, 0.2)] {
            let n = n as f64;
            let sigma = (p * (1.0 - p) / n).sqrt();
            let rate = hits as f64 / n;
            assert!((rate - p).abs() <= 3.0 * sigma, "rate {rate} vs {p} ± 3·{sigma}");
        }
    }
}
