//! Exact dynamic programming over a [`Lattice`].
//!
//! All recursions run in log space. Label clamping restricts each time step to
//! the contiguous block of states owned by the gold label; states outside the
//! block carry −∞ and are skipped. The sum-product recursions use transition
//! tables rescaled by their column (forward) or row (backward) maxima, so the
//! inner loop is a plain multiply-add; any column whose rescaled sum underflows
//! falls back to an explicit log-sum-exp.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::lattice::{energy, Lattice};
use crate::matrix::Matrix;
use crate::partition::StatePartition;

/// Rescaled sums below this are recomputed in log space: far enough above the
/// subnormal range that anything dropped by underflow is negligible.
const SAFE_SUM: f64 = 1e-250;

/// Numerically stable `ln Σ exp(v)`. An empty or all −∞ input yields −∞.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Node and edge posteriors of the Gibbs distribution over state paths.
#[derive(Debug, Clone)]
pub struct Marginals {
    /// `node[(t, z)] = P(z_t = z)`.
    pub node: Matrix,
    /// `edge[t][(i, j)] = P(z_t = i, z_{t+1} = j)`, one matrix per interior edge.
    pub edge: Vec<Matrix>,
}

/// Node posteriors plus edge posteriors summed over time: the expected
/// sufficient statistics needed by the likelihood gradient.
#[derive(Debug, Clone)]
pub struct ExpectedCounts {
    pub log_z: f64,
    pub node: Matrix,
    pub trans: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub states: Vec<usize>,
    pub labels: Vec<usize>,
    pub score: f64,
}

/// Which states are live at each time step.
#[derive(Clone, Copy)]
enum Clamp<'a> {
    Free,
    Labels(&'a [usize], &'a StatePartition),
}

impl Clamp<'_> {
    #[inline]
    fn range(&self, t: usize, m: usize) -> Range<usize> {
        match *self {
            Clamp::Free => 0..m,
            Clamp::Labels(labels, partition) => partition.states_of(labels[t]),
        }
    }
}

fn clamp<'a>(
    lattice: &Lattice,
    labels: &'a [usize],
    partition: &'a StatePartition,
) -> Result<Clamp<'a>> {
    if labels.len() != lattice.len() {
        return Err(Error::LengthMismatch {
            expected: lattice.len(),
            got: labels.len(),
        });
    }
    check_partition(lattice, partition)?;
    for &y in labels {
        partition.check_label(y)?;
    }
    Ok(Clamp::Labels(labels, partition))
}

fn check_partition(lattice: &Lattice, partition: &StatePartition) -> Result<()> {
    if partition.num_states() != lattice.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} states, lattice has {}",
            partition.num_states(),
            lattice.num_states()
        )));
    }
    Ok(())
}

fn forward(lattice: &Lattice, clamp: Clamp<'_>) -> (Matrix, f64) {
    let t_len = lattice.len();
    let m = lattice.num_states();
    let emit = lattice.emit();
    let trans = lattice.trans();
    let scaled = lattice.transition_table().scaled();

    let mut alpha = Matrix::filled(t_len, m, f64::NEG_INFINITY);
    for j in clamp.range(0, m) {
        alpha[(0, j)] = emit[(0, j)];
    }
    let mut weights = vec![0.0; m];
    let mut sums = vec![0.0; m];
    for t in 1..t_len {
        let prev = clamp.range(t - 1, m);
        let cur = clamp.range(t, m);
        let shift = prev
            .clone()
            .map(|i| alpha[(t - 1, i)])
            .fold(f64::NEG_INFINITY, f64::max);
        for i in prev.clone() {
            weights[i] = (alpha[(t - 1, i)] - shift).exp();
        }
        sums[cur.clone()].iter_mut().for_each(|s| *s = 0.0);
        for i in prev.clone() {
            let w = weights[i];
            let row = &scaled.by_col.row(i)[cur.clone()];
            for (s, &e) in sums[cur.clone()].iter_mut().zip(row) {
                *s += w * e;
            }
        }
        for j in cur {
            let s = sums[j];
            let value = if s > SAFE_SUM && s.is_finite() {
                shift + scaled.col_max[j] + s.ln()
            } else {
                let terms: Vec<f64> = prev
                    .clone()
                    .map(|i| alpha[(t - 1, i)] + trans[(i, j)])
                    .collect();
                logsumexp(&terms)
            };
            alpha[(t, j)] = value + emit[(t, j)];
        }
    }
    let last = clamp.range(t_len - 1, m);
    let log_z = logsumexp(&alpha.row(t_len - 1)[last]);
    (alpha, log_z)
}

fn backward(lattice: &Lattice, clamp: Clamp<'_>) -> Matrix {
    let t_len = lattice.len();
    let m = lattice.num_states();
    let emit = lattice.emit();
    let trans = lattice.trans();
    let scaled = lattice.transition_table().scaled();

    let mut beta = Matrix::filled(t_len, m, f64::NEG_INFINITY);
    for i in clamp.range(t_len - 1, m) {
        beta[(t_len - 1, i)] = 0.0;
    }
    let mut ahead = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let next = clamp.range(t + 1, m);
        let cur = clamp.range(t, m);
        for j in next.clone() {
            ahead[j] = emit[(t + 1, j)] + beta[(t + 1, j)];
        }
        let shift = ahead[next.clone()]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        for j in next.clone() {
            weights[j] = (ahead[j] - shift).exp();
        }
        for i in cur {
            let row = &scaled.by_row.row(i)[next.clone()];
            let s: f64 = row
                .iter()
                .zip(&weights[next.clone()])
                .map(|(e, w)| e * w)
                .sum();
            beta[(t, i)] = if s > SAFE_SUM && s.is_finite() {
                shift + scaled.row_max[i] + s.ln()
            } else {
                let terms: Vec<f64> = next.clone().map(|j| trans[(i, j)] + ahead[j]).collect();
                logsumexp(&terms)
            };
        }
    }
    beta
}

/// Walks every interior edge and hands `(t, i, j, P(z_t=i, z_{t+1}=j))` to `sink`
/// for live state pairs.
fn for_each_edge<F>(
    lattice: &Lattice,
    clamp: Clamp<'_>,
    alpha: &Matrix,
    beta: &Matrix,
    log_z: f64,
    mut sink: F,
) where
    F: FnMut(usize, usize, usize, f64),
{
    let t_len = lattice.len();
    let m = lattice.num_states();
    let emit = lattice.emit();
    let trans = lattice.trans();
    let scaled = lattice.transition_table().scaled();
    let mut left = vec![0.0; m];
    let mut right = vec![0.0; m];
    for t in 0..t_len.saturating_sub(1) {
        let cur = clamp.range(t, m);
        let next = clamp.range(t + 1, m);
        let shift = cur
            .clone()
            .map(|i| alpha[(t, i)])
            .fold(f64::NEG_INFINITY, f64::max);
        for i in cur.clone() {
            left[i] = (alpha[(t, i)] - shift).exp();
        }
        // Exponent is bounded above by the spread of transition column j.
        for j in next.clone() {
            right[j] =
                (emit[(t + 1, j)] + beta[(t + 1, j)] + scaled.col_max[j] + shift - log_z).exp();
        }
        for i in cur.clone() {
            let row = scaled.by_col.row(i);
            for j in next.clone() {
                let partial = left[i] * row[j];
                let mut p = partial * right[j];
                if !p.is_finite() || (partial < SAFE_SUM && right[j] > 1.0) {
                    p = (alpha[(t, i)] + trans[(i, j)] + emit[(t + 1, j)] + beta[(t + 1, j)]
                        - log_z)
                        .exp();
                }
                sink(t, i, j, p);
            }
        }
    }
}

fn node_posteriors(alpha: &Matrix, beta: &Matrix, log_z: f64) -> Matrix {
    let mut node = Matrix::zeros(alpha.rows(), alpha.cols());
    for ((n, a), b) in node
        .as_mut_slice()
        .iter_mut()
        .zip(alpha.as_slice())
        .zip(beta.as_slice())
    {
        let v = a + b;
        *n = if v == f64::NEG_INFINITY {
            0.0
        } else {
            (v - log_z).exp()
        };
    }
    node
}

fn marginals(lattice: &Lattice, clamp: Clamp<'_>) -> Result<Marginals> {
    let (alpha, log_z) = forward(lattice, clamp);
    ensure_reachable(lattice, &alpha, log_z)?;
    let beta = backward(lattice, clamp);
    let m = lattice.num_states();
    let mut edge = vec![Matrix::zeros(m, m); lattice.len().saturating_sub(1)];
    for_each_edge(lattice, clamp, &alpha, &beta, log_z, |t, i, j, p| {
        edge[t][(i, j)] = p;
    });
    Ok(Marginals {
        node: node_posteriors(&alpha, &beta, log_z),
        edge,
    })
}

fn ensure_reachable(lattice: &Lattice, alpha: &Matrix, log_z: f64) -> Result<()> {
    if log_z == f64::NEG_INFINITY {
        let position = (0..lattice.len())
            .find(|&t| alpha.row(t).iter().all(|v| *v == f64::NEG_INFINITY))
            .unwrap_or(lattice.len() - 1);
        return Err(Error::UnreachableLabel { label: 0, position });
    }
    if !log_z.is_finite() {
        return Err(Error::NonFinite("log partition".into()));
    }
    Ok(())
}

/// Log partition function over all `M^T` state paths.
pub fn forward_log_z(lattice: &Lattice) -> f64 {
    forward(lattice, Clamp::Free).1
}

/// Log of the summed weight of state paths consistent with `labels`.
pub fn clamped_log_z(lattice: &Lattice, labels: &[usize], partition: &StatePartition) -> Result<f64> {
    let clamp = clamp(lattice, labels, partition)?;
    let (alpha, log_z) = forward(lattice, clamp);
    ensure_reachable(lattice, &alpha, log_z)?;
    Ok(log_z)
}

/// `ln P(labels | x)`, never positive.
pub fn sequence_log_likelihood(
    lattice: &Lattice,
    labels: &[usize],
    partition: &StatePartition,
) -> Result<f64> {
    let clamped = clamped_log_z(lattice, labels, partition)?;
    let free = forward_log_z(lattice);
    Ok((clamped - free).min(0.0))
}

pub fn posterior_marginals(lattice: &Lattice) -> Marginals {
    marginals(lattice, Clamp::Free).expect("free lattice with finite potentials is reachable")
}

/// Posteriors of the distribution restricted to paths consistent with `labels`.
pub fn clamped_posterior_marginals(
    lattice: &Lattice,
    labels: &[usize],
    partition: &StatePartition,
) -> Result<Marginals> {
    marginals(lattice, clamp(lattice, labels, partition)?)
}

/// Node posteriors and time-summed edge posteriors, free when `labels` is
/// `None`, clamped otherwise.
pub fn expected_counts(
    lattice: &Lattice,
    labels: Option<(&[usize], &StatePartition)>,
) -> Result<ExpectedCounts> {
    let clamp = match labels {
        None => Clamp::Free,
        Some((labels, partition)) => clamp(lattice, labels, partition)?,
    };
    let (alpha, log_z) = forward(lattice, clamp);
    ensure_reachable(lattice, &alpha, log_z)?;
    let beta = backward(lattice, clamp);
    let m = lattice.num_states();
    let mut trans = Matrix::zeros(m, m);
    for_each_edge(lattice, clamp, &alpha, &beta, log_z, |_, i, j, p| {
        trans[(i, j)] += p;
    });
    Ok(ExpectedCounts {
        log_z,
        node: node_posteriors(&alpha, &beta, log_z),
        trans,
    })
}

/// Highest-scoring state path. Ties go to the lowest state index, both for the
/// final state and for every back-pointer.
pub fn viterbi(lattice: &Lattice, partition: &StatePartition) -> Result<DecodeResult> {
    check_partition(lattice, partition)?;
    let t_len = lattice.len();
    let m = lattice.num_states();
    let emit = lattice.emit();
    let trans = lattice.trans();

    let mut delta = emit.row(0).to_vec();
    let mut next = vec![0.0; m];
    let mut back = vec![0usize; t_len * m];
    for t in 1..t_len {
        next.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        let ptr = &mut back[t * m..(t + 1) * m];
        for (i, &d) in delta.iter().enumerate() {
            for (j, &tr) in trans.row(i).iter().enumerate() {
                let v = d + tr;
                if v > next[j] {
                    next[j] = v;
                    ptr[j] = i;
                }
            }
        }
        for (j, v) in next.iter_mut().enumerate() {
            *v += emit[(t, j)];
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut best = 0;
    for (z, &v) in delta.iter().enumerate() {
        if v > delta[best] {
            best = z;
        }
    }
    let score = delta[best];
    let mut states = vec![0usize; t_len];
    states[t_len - 1] = best;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t * m + states[t]];
    }
    let labels = partition.labels_of(&states);
    debug_assert_eq!(energy(lattice, &states, &labels, partition).ok(), Some(score));
    Ok(DecodeResult {
        states,
        labels,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lattice(rng: &mut ChaCha8Rng, t: usize, m: usize) -> Lattice {
        let emit = Matrix::from_vec(t, m, (0..t * m).map(|_| rng.random_range(-3.0..3.0)).collect());
        let trans = Matrix::from_vec(m, m, (0..m * m).map(|_| rng.random_range(-3.0..3.0)).collect());
        Lattice::from_parts(emit, trans).unwrap()
    }

    #[test]
    fn logsumexp_edge_cases() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((logsumexp(&[1234.0, 1232.0]) - 1234.126928011042972496444).abs() < 1e-12);
        assert!((logsumexp(&[0.5, 2.0]) - 2.201413277982752409499483).abs() < 1e-15);
    }

    #[test]
    fn uniform_partition_function() {
        let lat = Lattice::from_parts(Matrix::zeros(3, 4), Matrix::zeros(4, 4)).unwrap();
        assert!((forward_log_z(&lat) - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_step_is_logsumexp() {
        let lat = Lattice::from_parts(Matrix::from_rows(&[vec![0.3, -1.7]]), Matrix::zeros(2, 2))
            .unwrap();
        assert!((forward_log_z(&lat) - logsumexp(&[0.3, -1.7])).abs() < 1e-15);
    }

    #[test]
    fn one_state_per_label_clamps_to_single_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lat = random_lattice(&mut rng, 4, 3);
        let p = StatePartition::new(3, 1).unwrap();
        let y = [2, 0, 1, 1];
        let c = clamped_log_z(&lat, &y, &p).unwrap();
        let e = energy(&lat, &y, &y, &p).unwrap();
        assert!((c - e).abs() < 1e-12);
    }

    #[test]
    fn clamped_uniform_counts_paths() {
        let lat = Lattice::from_parts(Matrix::zeros(3, 4), Matrix::zeros(4, 4)).unwrap();
        let p = StatePartition::new(2, 2).unwrap();
        let c = clamped_log_z(&lat, &[0, 1, 0], &p).unwrap();
        assert!((c - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_label_has_probability_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lat = random_lattice(&mut rng, 5, 4);
        let p = StatePartition::new(1, 4).unwrap();
        assert_eq!(sequence_log_likelihood(&lat, &[0; 5], &p).unwrap(), 0.0);
    }

    #[test]
    fn uniform_two_label_likelihood() {
        let lat = Lattice::from_parts(Matrix::zeros(2, 2), Matrix::zeros(2, 2)).unwrap();
        let p = StatePartition::new(2, 1).unwrap();
        let ll = sequence_log_likelihood(&lat, &[0, 1], &p).unwrap();
        assert!((ll + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_marginals() {
        let lat = Lattice::from_parts(Matrix::zeros(3, 5), Matrix::zeros(5, 5)).unwrap();
        let marg = posterior_marginals(&lat);
        assert!(marg.node.as_slice().iter().all(|v| (v - 0.2).abs() < 1e-12));
        for e in &marg.edge {
            assert!(e.as_slice().iter().all(|v| (v - 0.04).abs() < 1e-12));
        }
    }

    #[test]
    fn single_step_marginal_is_softmax() {
        let row = vec![0.5, -1.0, 2.0];
        let lat = Lattice::from_parts(Matrix::from_rows(&[row.clone()]), Matrix::zeros(3, 3))
            .unwrap();
        let marg = posterior_marginals(&lat);
        let z = logsumexp(&row);
        for (j, v) in row.iter().enumerate() {
            assert!((marg.node[(0, j)] - (v - z).exp()).abs() < 1e-15);
        }
        assert!(marg.edge.is_empty());
    }

    #[test]
    fn marginals_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lat = random_lattice(&mut rng, 5, 4);
        let marg = posterior_marginals(&lat);
        for t in 0..5 {
            let s: f64 = marg.node.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for (t, e) in marg.edge.iter().enumerate() {
            assert!((e.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..4 {
                let row: f64 = e.row(i).iter().sum();
                assert!((row - marg.node[(t, i)]).abs() < 1e-9);
                let col: f64 = (0..4).map(|k| e[(k, i)]).sum();
                assert!((col - marg.node[(t + 1, i)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn expected_counts_match_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let lat = random_lattice(&mut rng, 4, 6);
        let p = StatePartition::new(3, 2).unwrap();
        let y = [0, 2, 2, 1];
        let marg = clamped_posterior_marginals(&lat, &y, &p).unwrap();
        let counts = expected_counts(&lat, Some((&y, &p))).unwrap();
        let mut summed = Matrix::zeros(6, 6);
        for e in &marg.edge {
            summed.add_assign(e);
        }
        for (a, b) in summed.as_slice().iter().zip(counts.trans.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(marg.node, counts.node);
        for t in 0..4 {
            for z in 0..6 {
                if p.label_of(z) != y[t] {
                    assert_eq!(marg.node[(t, z)], 0.0);
                }
            }
        }
    }

    #[test]
    fn viterbi_single_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lat = random_lattice(&mut rng, 4, 1);
        let p = StatePartition::new(1, 1).unwrap();
        let d = viterbi(&lat, &p).unwrap();
        assert_eq!(d.states, vec![0; 4]);
        let expected = energy(&lat, &[0; 4], &[0; 4], &p).unwrap();
        assert_eq!(d.score, expected);
    }

    #[test]
    fn viterbi_without_transitions_is_pointwise_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let emit = Matrix::from_vec(6, 4, (0..24).map(|_| rng.random_range(-3.0..3.0)).collect());
        let lat = Lattice::from_parts(emit.clone(), Matrix::zeros(4, 4)).unwrap();
        let p = StatePartition::new(2, 2).unwrap();
        let d = viterbi(&lat, &p).unwrap();
        for t in 0..6 {
            let row = emit.row(t);
            let best = (0..4).fold(0, |b, z| if row[z] > row[b] { z } else { b });
            assert_eq!(d.states[t], best);
            assert_eq!(d.labels[t], best / 2);
        }
    }

    #[test]
    fn viterbi_ties_go_to_lowest_index() {
        let lat = Lattice::from_parts(Matrix::zeros(3, 3), Matrix::zeros(3, 3)).unwrap();
        let p = StatePartition::new(3, 1).unwrap();
        assert_eq!(viterbi(&lat, &p).unwrap().states, vec![0, 0, 0]);
    }

    #[test]
    fn extreme_potentials_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let emit = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-900.0..900.0)).collect());
        let trans = Matrix::from_vec(3, 3, (0..9).map(|_| rng.random_range(-900.0..900.0)).collect());
        let lat = Lattice::from_parts(emit, trans).unwrap();
        let marg = posterior_marginals(&lat);
        assert!(marg.node.is_finite());
        for t in 0..6 {
            assert!((marg.node.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(forward_log_z(&lat).is_finite());
    }

    #[test]
    fn length_errors() {
        let lat = Lattice::from_parts(Matrix::zeros(2, 2), Matrix::zeros(2, 2)).unwrap();
        let p = StatePartition::new(2, 1).unwrap();
        assert!(clamped_log_z(&lat, &[0], &p).is_err());
        assert!(clamped_log_z(&lat, &[0, 2], &p).is_err());
        let wrong = StatePartition::new(1, 1).unwrap();
        assert!(viterbi(&lat, &wrong).is_err());
    }
}
