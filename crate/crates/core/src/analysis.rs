//! Reports on what a trained model's hidden states do: which tokens each state
//! is decoded on, how transition mass is spread over label blocks, and the
//! singular values of the transition table.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::ThreadPool;

use crate::data::TokenSequence;
use crate::error::Result;
use crate::inference::logsumexp;
use crate::matrix::Matrix;
use crate::model::ModelParams;
use crate::partition::StatePartition;
use crate::train::map_indexed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateActivation {
    pub state: usize,
    pub label: String,
    /// Positions decoded into this state.
    pub visits: usize,
    /// Most frequent tokens, by count descending then token.
    pub tokens: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationReport {
    pub states: Vec<StateActivation>,
}

/// Counts, per hidden state, the tokens whose Viterbi state path passes
/// through it, keeping the `top_k` most frequent.
pub fn state_activation_report(
    params: &ModelParams,
    corpus: &[TokenSequence],
    top_k: usize,
    pool: Option<&ThreadPool>,
) -> Result<ActivationReport> {
    let table = params.transition_table()?;
    let paths = map_indexed(pool, corpus.len(), |i| params.decode_with(&corpus[i], &table))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let m = params.num_states();
    let mut counts: Vec<HashMap<&str, usize>> = vec![HashMap::new(); m];
    for (seq, path) in corpus.iter().zip(&paths) {
        for (token, &z) in seq.tokens.iter().zip(&path.states) {
            *counts[z].entry(token.as_str()).or_default() += 1;
        }
    }
    let states = counts
        .into_iter()
        .enumerate()
        .map(|(z, c)| {
            let visits = c.values().sum();
            let mut tokens: Vec<(String, usize)> =
                c.into_iter().map(|(t, n)| (t.to_string(), n)).collect();
            tokens.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            tokens.truncate(top_k);
            StateActivation {
                state: z,
                label: params.labels.name(params.partition.label_of(z)).to_string(),
                visits,
                tokens,
            }
        })
        .collect();
    Ok(ActivationReport { states })
}

impl ActivationReport {
    /// One line per state: `state label visits: tok(count) tok(count) ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.states {
            let _ = write!(out, "{:>4} {:<8} {:>7}:", s.state, s.label, s.visits);
            for (token, count) in &s.tokens {
                let _ = write!(out, " {token}({count})");
            }
            out.push('\n');
        }
        out
    }

    /// `state,rank,token,count` rows with a header line. Tokens containing
    /// commas or quotes are quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,rank,token,count\n");
        for s in &self.states {
            for (rank, (token, count)) in s.tokens.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", s.state, rank + 1, csv_field(token), count);
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `N × N` label-level view of an `M × M` logit table: the log-mean-exp of
/// each `k × k` block.
pub fn block_summary(logits: &Matrix, partition: &StatePartition) -> Matrix {
    let n = partition.num_labels();
    let k = partition.states_per_label();
    let norm = ((k * k) as f64).ln();
    let mut out = Matrix::zeros(n, n);
    let mut block = Vec::with_capacity(k * k);
    for a in 0..n {
        for b in 0..n {
            block.clear();
            for i in partition.states_of(a) {
                block.extend_from_slice(&logits.row(i)[partition.states_of(b)]);
            }
            out[(a, b)] = logsumexp(&block) - norm;
        }
    }
    out
}

pub fn transition_block_summary(params: &ModelParams) -> Matrix {
    block_summary(&params.transition.logits(), &params.partition)
}

/// Fixed-width table with label names along both axes; rows are the source
/// label, columns the destination.
pub fn render_block_table<S: AsRef<str>>(summary: &Matrix, labels: &[S]) -> String {
    let width = labels
        .iter()
        .map(|l| l.as_ref().len())
        .max()
        .unwrap_or(0)
        .max(9);
    let mut out = format!("{:>width$}", "from\\to");
    for l in labels {
        let _ = write!(out, " {:>width$}", l.as_ref());
    }
    out.push('\n');
    for (a, l) in labels.iter().enumerate() {
        let _ = write!(out, "{:>width$}", l.as_ref());
        for v in summary.row(a) {
            let _ = write!(out, " {v:>width$.4}");
        }
        out.push('\n');
    }
    out
}

/// Singular values of `m`, largest first.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    let mut values: Vec<f64> = dm.singular_values().iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Singular values of the realized `M × M` transition logit table.
pub fn rank_spectrum(params: &ModelParams) -> Vec<f64> {
    singular_values(&params.transition.logits())
}

/// One line per singular value: index, value, and value relative to the largest.
pub fn render_spectrum(values: &[f64]) -> String {
    let top = values.first().copied().unwrap_or(0.0);
    let mut out = String::from("index\tsigma\tsigma/sigma0\n");
    for (i, v) in values.iter().enumerate() {
        let rel = if top > 0.0 { v / top } else { 0.0 };
        let _ = writeln!(out, "{i}\t{v:.6e}\t{rel:.6e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_vocabulary, EmissionConfig};
    use crate::labels::LabelSet;
    use crate::model::ModelConfig;
    use crate::transition::{TransitionFactors, TransitionMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn corpus() -> Vec<TokenSequence> {
        vec![
            TokenSequence::labeled(["a", "b", "a"], ["O", "I-PER", "O"]).unwrap(),
            TokenSequence::labeled(["c", "a"], ["I-PER", "O"]).unwrap(),
        ]
    }

    fn model(labels: &[&str], k: usize, rank: usize) -> ModelParams {
        let cfg = ModelConfig {
            states_per_label: k,
            rank,
            mode: TransitionMode::LowRank,
            emission: EmissionConfig {
                word_dim: 3,
                char_dim: 2,
                hidden_dim: 4,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels = LabelSet::new(labels).unwrap();
        ModelParams::init(labels, build_vocabulary(&corpus(), 1), &cfg, &mut rng).unwrap()
    }

    #[test]
    fn single_state_sees_every_token() {
        let data = corpus();
        let params = model(&["O", "I-PER"], 1, 1);
        let one_label = ModelParams::init(
            LabelSet::new(&["O"]).unwrap(),
            params.vocab.clone(),
            &ModelConfig {
                states_per_label: 1,
                rank: 1,
                mode: TransitionMode::FullRank,
                emission: params.emission.config(),
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let report = state_activation_report(&one_label, &data, 10, None).unwrap();
        assert_eq!(report.states.len(), 1);
        assert_eq!(report.states[0].visits, 5);
        assert_eq!(
            report.states[0].tokens,
            vec![("a".to_string(), 3), ("b".to_string(), 1), ("c".to_string(), 1)]
        );
    }

    #[test]
    fn visits_cover_all_tokens_and_top_k_truncates() {
        let data = corpus();
        let params = model(&["O", "I-PER"], 3, 2);
        let full = state_activation_report(&params, &data, 10, None).unwrap();
        assert_eq!(full.states.iter().map(|s| s.visits).sum::<usize>(), 5);
        let listed: usize = full.states.iter().flat_map(|s| &s.tokens).map(|(_, c)| c).sum();
        assert_eq!(listed, 5);
        let top1 = state_activation_report(&params, &data, 1, None).unwrap();
        assert!(top1.states.iter().all(|s| s.tokens.len() <= 1));
        let csv = top1.to_csv();
        assert!(csv.starts_with("state,rank,token,count\n"));
        assert_eq!(top1.to_text().lines().count(), 6);
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_field("plain"), "plain");
    }

    #[test]
    fn block_summary_cases() {
        let p = StatePartition::new(3, 2).unwrap();
        let zeros = block_summary(&Matrix::zeros(6, 6), &p);
        assert!(zeros.as_slice().iter().all(|v| v.abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = random_matrix(4, 4, &mut rng);
        let k1 = block_summary(&raw, &StatePartition::new(4, 1).unwrap());
        for (a, b) in k1.as_slice().iter().zip(raw.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }

        let t = random_matrix(6, 6, &mut rng);
        let s = block_summary(&t, &p);
        for a in 0..3 {
            for b in 0..3 {
                let mean: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(i, j)| t[(2 * a + i, 2 * b + j)].exp())
                    .sum::<f64>()
                    / 4.0;
                assert!((s[(a, b)] - mean.ln()).abs() < 1e-12);
            }
        }
        let table = render_block_table(&s, &["O", "I-PER", "I-LOC"]);
        assert_eq!(table.lines().count(), 4);
    }

    #[test]
    fn identity_spectrum() {
        let f = TransitionFactors::low_rank(Matrix::identity(5), Matrix::identity(5)).unwrap();
        let s = singular_values(&f.logits());
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rank_one_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_matrix(6, 1, &mut rng);
        let v = random_matrix(6, 1, &mut rng);
        let norm = |m: &Matrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = singular_values(&TransitionFactors::low_rank(u.clone(), v.clone()).unwrap().logits());
        assert!((s[0] - norm(&u) * norm(&v)).abs() < 1e-12);
        assert!(s[1..].iter().all(|x| *x < 1e-12 * s[0]));
    }

    #[test]
    fn large_low_rank_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_matrix(512, 16, &mut rng);
        let v = random_matrix(512, 16, &mut rng);
        let s = singular_values(&u.matmul_t(&v));
        assert_eq!(s.len(), 512);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        assert!(s[15] > 1e-3 * s[0]);
        assert!(s[16] < 1e-8 * s[0], "{}", s[16] / s[0]);
        assert!(render_spectrum(&s).lines().count() == 513);
    }

    #[test]
    fn model_spectrum_has_m_values() {
        let params = model(&["O", "I-PER"], 4, 3);
        let s = rank_spectrum(&params);
        assert_eq!(s.len(), 8);
        assert!(s[3] < 1e-8 * s[0]);
        assert_eq!(transition_block_summary(&params).shape(), (2, 2));
    }
}
