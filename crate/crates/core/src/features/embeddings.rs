use std::fs;
use std::path::Path;

use rand::Rng;

use super::vocab::{normalize_word, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Builds a `|V| × dim` word table. Rows of words present in the embeddings
/// file (after digit folding) are copied from it; every other row is drawn
/// Glorot-uniform over the whole table's fan-in/fan-out. Returns the table
/// and the number of vocabulary rows filled from the file.
///
/// The file holds one word per line followed by `dim` space-separated
/// decimals. The first occurrence of a word wins.
pub fn load_embeddings<R: Rng + ?Sized>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<(Matrix, usize)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_embeddings(&text, path, vocab, dim, rng)
}

pub(crate) fn parse_embeddings<R: Rng + ?Sized>(
    text: &str,
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<(Matrix, usize)> {
    let mut table = Matrix::glorot(vocab.len(), dim, rng);
    let mut filled = vec![false; vocab.len()];
    let mut hits = 0;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut first = true;
    for (n, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(n + 1, format!("bad number `{f}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            let message = if first {
                format!("file has dimension {}, expected {dim}", values.len())
            } else {
                format!("expected {dim} values, found {}", values.len())
            };
            return Err(parse_err(n + 1, message));
        }
        first = false;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(n + 1, "non-finite value".into()));
        }
        let id = if word == super::vocab::UNK_WORD {
            Some(0)
        } else {
            match vocab.word_id(&normalize_word(word)) {
                0 => None,
                id => Some(id),
            }
        };
        if let Some(id) = id {
            if !filled[id] {
                filled[id] = true;
                hits += 1;
                table.row_mut(id).copy_from_slice(&values);
            }
        }
    }
    Ok((table, hits))
}
