use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::TokenSequence;
use crate::error::{Error, Result};
use crate::labels::is_conll_label;

const DOCSTART: &str = "-DOCSTART-";

/// Whitespace-split columns of each line of one sentence, with the 1-based
/// line number of its first line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConllSentence {
    pub first_line: usize,
    pub rows: Vec<Vec<String>>,
}

pub fn read_conll_rows(path: impl AsRef<Path>) -> Result<Vec<ConllSentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_conll_rows(&text, path)
}

/// Splits text into sentences on blank lines, dropping any sentence that
/// contains a `-DOCSTART-` line. Column counts must agree within a sentence.
pub fn parse_conll_rows(text: &str, path: &Path) -> Result<Vec<ConllSentence>> {
    let mut sentences = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut first_line = 0;
    let mut docstart = false;
    let flush = |rows: &mut Vec<Vec<String>>,
                     docstart: &mut bool,
                     first_line: usize,
                     out: &mut Vec<ConllSentence>| {
        if !rows.is_empty() && !*docstart {
            out.push(ConllSentence {
                first_line,
                rows: std::mem::take(rows),
            });
        }
        rows.clear();
        *docstart = false;
    };
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let cols: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if cols.is_empty() {
            flush(&mut rows, &mut docstart, first_line, &mut sentences);
            continue;
        }
        if rows.is_empty() {
            first_line = line_no;
        } else if rows[0].len() != cols.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "expected {} columns as on line {first_line}, found {}",
                    rows[0].len(),
                    cols.len()
                ),
            });
        }
        if cols[0] == DOCSTART {
            docstart = true;
        }
        rows.push(cols);
    }
    flush(&mut rows, &mut docstart, first_line, &mut sentences);
    Ok(sentences)
}

pub fn read_conll(path: impl AsRef<Path>) -> Result<Vec<TokenSequence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_conll(&text, path)
}

/// Labeled sentences: token from the first column, label from the last.
pub fn parse_conll(text: &str, path: &Path) -> Result<Vec<TokenSequence>> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    parse_conll_rows(text, path)?
        .into_iter()
        .map(|sentence| {
            if sentence.rows[0].len() < 2 {
                return Err(err(
                    sentence.first_line,
                    "labeled input needs at least two columns".into(),
                ));
            }
            let mut tokens = Vec::with_capacity(sentence.rows.len());
            let mut labels = Vec::with_capacity(sentence.rows.len());
            for (i, mut row) in sentence.rows.into_iter().enumerate() {
                let label = row.pop().expect("row has ≥ 2 columns");
                if !is_conll_label(&label) {
                    return Err(err(
                        sentence.first_line + i,
                        format!("unknown label `{label}`"),
                    ));
                }
                tokens.push(row.swap_remove(0));
                labels.push(label);
            }
            TokenSequence::new(tokens, Some(labels))
        })
        .collect()
}

/// Writes labeled sentences as `token _ _ label` lines, one blank line after
/// each sentence.
pub fn write_conll<W: Write>(mut out: W, corpus: &[TokenSequence]) -> Result<()> {
    for (i, seq) in corpus.iter().enumerate() {
        let labels = seq.labels.as_ref().ok_or(Error::MissingLabels(i))?;
        for (token, label) in seq.tokens.iter().zip(labels) {
            writeln!(out, "{token} _ _ {label}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<TokenSequence>> {
        parse_conll(text, Path::new("test.conll"))
    }

    #[test]
    fn two_line_sentence() {
        let corpus = parse("EU NNP I-NP I-ORG\nrejects VBZ I-VP O\n").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].tokens, vec!["EU", "rejects"]);
        assert_eq!(corpus[0].labels.as_ref().unwrap(), &vec!["I-ORG", "O"]);
    }

    #[test]
    fn docstart_only() {
        let corpus = parse("-DOCSTART- -X- O O\n\n-DOCSTART- -X- O O\n").unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn blank_runs_do_not_create_empty_sentences() {
        let corpus = parse("\n\na _ _ O\n\n\n\nb _ _ I-PER\n\n").unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[1].tokens, vec!["b"]);
    }

    #[test]
    fn docstart_sentence_is_dropped_with_its_lines() {
        let corpus = parse("-DOCSTART- -X- O O\n\nPeter NNP I-NP I-PER\n").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].tokens, vec!["Peter"]);
    }

    #[test]
    fn inconsistent_columns() {
        let e = parse("a _ _ O\nb _ O\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn unknown_label() {
        let e = parse("a _ _ I-FOO\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn write_then_read() {
        let corpus = vec![
            TokenSequence::labeled(["EU", "rejects", "German"], ["I-ORG", "O", "I-MISC"]).unwrap(),
            TokenSequence::labeled(["Peter"], ["I-PER"]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_conll(&mut buf, &corpus).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("EU _ _ I-ORG\n"));
        assert_eq!(parse(&text).unwrap(), corpus);
    }
}
