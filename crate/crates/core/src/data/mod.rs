//! Corpus types, CoNLL column I/O, IOB1 validation and the synthetic
//! bracket-memory task.

mod conll;
mod iob;
mod synthetic;

pub use conll::{parse_conll, parse_conll_rows, read_conll, read_conll_rows, write_conll, ConllSentence};
pub use iob::{validate_iob, Violation};
pub use synthetic::{generate_synthetic, label_synthetic, SyntheticTaskSpec};

use crate::error::{Error, Result};

/// Tokens of one sentence plus optional gold labels of the same length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub labels: Option<Vec<String>>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, labels: Option<Vec<String>>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::LengthMismatch {
                expected: 1,
                got: 0,
            });
        }
        if let Some(l) = &labels {
            if l.len() != tokens.len() {
                return Err(Error::LengthMismatch {
                    expected: tokens.len(),
                    got: l.len(),
                });
            }
        }
        Ok(Self { tokens, labels })
    }

    pub fn labeled<S: Into<String>, L: Into<String>>(
        tokens: impl IntoIterator<Item = S>,
        labels: impl IntoIterator<Item = L>,
    ) -> Result<Self> {
        Self::new(
            tokens.into_iter().map(Into::into).collect(),
            Some(labels.into_iter().map(Into::into).collect()),
        )
    }

    pub fn unlabeled<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(tokens.into_iter().map(Into::into).collect(), None)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
