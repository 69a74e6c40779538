//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use elcrf::data::TokenSequence;
use elcrf::inference::logsumexp;
use elcrf::{Lattice, Matrix, StatePartition};
use rand::Rng;

/// Every state path of a lattice with its score, in lexicographic path order.
pub fn all_paths(lattice: &Lattice) -> Vec<(Vec<usize>, f64)> {
    let (t_len, m) = (lattice.len(), lattice.num_states());
    let (emit, trans) = (lattice.emit(), lattice.trans());
    let mut out = Vec::with_capacity(m.pow(t_len as u32));
    let mut path = vec![0; t_len];
    loop {
        let mut s = emit[(0, path[0])];
        for t in 1..t_len {
            s += trans[(path[t - 1], path[t])] + emit[(t, path[t])];
        }
        out.push((path.clone(), s));
        // Odometer increment, last position fastest.
        let mut t = t_len;
        loop {
            if t == 0 {
                return out;
            }
            t -= 1;
            path[t] += 1;
            if path[t] < m {
                break;
            }
            path[t] = 0;
        }
    }
}

/// Log-partition, node marginals and per-step edge marginals by enumeration,
/// restricted to paths accepted by `keep`.
pub struct Enumerated {
    pub log_z: f64,
    pub node: Matrix,
    pub edge: Vec<Matrix>,
    pub best: (Vec<usize>, f64),
}

pub fn enumerate(lattice: &Lattice, keep: impl Fn(&[usize]) -> bool) -> Enumerated {
    let (t_len, m) = (lattice.len(), lattice.num_states());
    let paths: Vec<(Vec<usize>, f64)> = all_paths(lattice).into_iter().filter(|(p, _)| keep(p)).collect();
    let scores: Vec<f64> = paths.iter().map(|(_, s)| *s).collect();
    let log_z = logsumexp(&scores);
    let mut node = Matrix::zeros(t_len, m);
    let mut edge = vec![Matrix::zeros(m, m); t_len.saturating_sub(1)];
    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::NEG_INFINITY);
    for (path, s) in &paths {
        let p = (s - log_z).exp();
        for t in 0..t_len {
            node[(t, path[t])] += p;
            if t > 0 {
                edge[t - 1][(path[t - 1], path[t])] += p;
            }
        }
        if *s > best.1 {
            best = (path.clone(), *s);
        }
    }
    Enumerated {
        log_z,
        node,
        edge,
        best,
    }
}

pub fn clamped_filter<'a>(labels: &'a [usize], partition: &'a StatePartition) -> impl Fn(&[usize]) -> bool + 'a {
    move |path| path.iter().zip(labels).all(|(&z, &y)| partition.label_of(z) == y)
}

pub fn uniform_matrix<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// Accuracy in percent over positions holding `token`.
pub fn token_accuracy(corpus: &[TokenSequence], predicted: &[Vec<String>], token: &str) -> f64 {
    let (mut total, mut correct) = (0usize, 0usize);
    for (seq, pred) in corpus.iter().zip(predicted) {
        let gold = seq.labels.as_ref().expect("gold labels");
        for ((tok, g), p) in seq.tokens.iter().zip(gold).zip(pred) {
            if tok == token {
                total += 1;
                correct += usize::from(g == p);
            }
        }
    }
    100.0 * correct as f64 / total.max(1) as f64
}

/// Best accuracy, in percent, on `token` positions of any predictor that
/// sees only the maximal run of `token`s around a position (its length, the
/// offset within it, and whether it touches either sentence end) and not
/// the tokens before or after the run.
///
/// The majority label of each such context class is taken in-sample on
/// `corpus` itself, so the figure bounds every memoryless rule from above.
pub fn memoryless_ceiling(corpus: &[TokenSequence], token: &str) -> f64 {
    let mut classes: HashMap<(usize, usize, bool, bool), HashMap<&str, usize>> = HashMap::new();
    let mut total = 0;
    for seq in corpus {
        let (toks, gold) = (&seq.tokens, seq.labels.as_ref().expect("gold labels"));
        let mut i = 0;
        while i < toks.len() {
            if toks[i] != token {
                i += 1;
                continue;
            }
            let start = i;
            while i < toks.len() && toks[i] == token {
                i += 1;
            }
            for p in start..i {
                let key = (i - start, p - start, start == 0, i == toks.len());
                *classes.entry(key).or_default().entry(gold[p].as_str()).or_default() += 1;
                total += 1;
            }
        }
    }
    let best: usize = classes.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    100.0 * best as f64 / total.max(1) as f64
}
