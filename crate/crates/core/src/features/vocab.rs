use std::collections::HashMap;

use super::encoder::TokenInput;
use crate::data::TokenSequence;

pub const UNK_WORD: &str = "<UNK>";
/// Index of the unknown-character entry in the character table.
pub const UNK_CHAR: usize = 0;
/// Index of the padding character placed at both ends of every token.
pub const BOUNDARY_CHAR: usize = 1;

/// Digits are folded to `0`; nothing else is normalized.
pub fn normalize_word(token: &str) -> String {
    token
        .chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect()
}

/// Word and character inventories. Word index 0 is `<UNK>`; character
/// indices 0 and 1 are the unknown and boundary characters.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its tables. `words[0]` must be `<UNK>`.
    pub fn from_parts(words: Vec<String>, counts: Vec<u64>, chars: Vec<char>) -> Self {
        let word_index = words
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let char_index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self {
            words,
            counts,
            word_index,
            chars,
            char_index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of character table rows, including the two reserved entries.
    pub fn char_table_len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Training frequency of each word index (0 for `<UNK>`).
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Index of the normalized form of `token`, 0 when unknown.
    pub fn word_id(&self, token: &str) -> usize {
        self.word_index
            .get(&normalize_word(token))
            .copied()
            .unwrap_or(0)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK_CHAR)
    }

    /// Word index plus the boundary-padded character index sequence.
    pub fn token_input(&self, token: &str) -> TokenInput {
        let mut chars = Vec::with_capacity(token.chars().count() + 2);
        chars.push(BOUNDARY_CHAR);
        chars.extend(token.chars().map(|c| self.char_id(c)));
        chars.push(BOUNDARY_CHAR);
        TokenInput {
            word: self.word_id(token),
            chars,
        }
    }

    pub fn is_singleton(&self, word: usize) -> bool {
        word != 0 && self.counts.get(word) == Some(&1)
    }
}

/// Words sorted by descending frequency, ties broken lexicographically; words
/// seen fewer than `min_count` times map to `<UNK>`. Characters are collected
/// from the raw tokens in code-point order.
pub fn build_vocabulary(corpus: &[TokenSequence], min_count: u64) -> Vocabulary {
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut chars: Vec<char> = Vec::new();
    for seq in corpus {
        for tok in &seq.tokens {
            *freq.entry(normalize_word(tok)).or_default() += 1;
            chars.extend(tok.chars());
        }
    }
    chars.sort_unstable();
    chars.dedup();
    let mut kept: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(w, c)| *c >= min_count.max(1) && w != UNK_WORD)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut words = vec![UNK_WORD.to_string()];
    let mut counts = vec![0];
    for (w, c) in kept {
        words.push(w);
        counts.push(c);
    }
    Vocabulary::from_parts(words, counts, chars)
}
