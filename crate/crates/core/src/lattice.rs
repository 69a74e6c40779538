//! Per-sentence scoring lattice and the path energy.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::partition::StatePartition;

/// Square transition log-potential table shared by every lattice built from
/// the same parameters. Exponentiated copies used by the sum-product
/// recursions are computed once on first use.
#[derive(Debug)]
pub struct TransitionTable {
    logits: Matrix,
    scaled: OnceLock<ScaledExp>,
}

/// `exp(trans[i,j] - col_max[j])` and `exp(trans[i,j] - row_max[i])`.
#[derive(Debug)]
pub(crate) struct ScaledExp {
    pub by_col: Matrix,
    pub col_max: Vec<f64>,
    pub by_row: Matrix,
    pub row_max: Vec<f64>,
}

impl TransitionTable {
    pub fn new(logits: Matrix) -> Result<Self> {
        if logits.rows() != logits.cols() || logits.rows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "transition table must be square and non-empty, got {:?}",
                logits.shape()
            )));
        }
        if !logits.is_finite() {
            return Err(Error::NonFinite("transition table".into()));
        }
        Ok(Self {
            logits,
            scaled: OnceLock::new(),
        })
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub(crate) fn scaled(&self) -> &ScaledExp {
        self.scaled.get_or_init(|| {
            let m = self.logits.rows();
            let mut col_max = vec![f64::NEG_INFINITY; m];
            let mut row_max = vec![f64::NEG_INFINITY; m];
            for i in 0..m {
                for (j, &v) in self.logits.row(i).iter().enumerate() {
                    col_max[j] = col_max[j].max(v);
                    row_max[i] = row_max[i].max(v);
                }
            }
            let mut by_col = Matrix::zeros(m, m);
            let mut by_row = Matrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    let v = self.logits[(i, j)];
                    by_col[(i, j)] = (v - col_max[j]).exp();
                    by_row[(i, j)] = (v - row_max[i]).exp();
                }
            }
            ScaledExp {
                by_col,
                col_max,
                by_row,
                row_max,
            }
        })
    }
}

/// `T × M` emission log-potentials plus the shared `M × M` transition table.
/// Every entry is finite.
#[derive(Debug, Clone)]
pub struct Lattice {
    emit: Matrix,
    trans: Arc<TransitionTable>,
}

impl Lattice {
    pub fn new(emit: Matrix, trans: Arc<TransitionTable>) -> Result<Self> {
        if emit.rows() == 0 {
            return Err(Error::DimensionMismatch("lattice needs T ≥ 1".into()));
        }
        if emit.cols() != trans.logits().rows() {
            return Err(Error::DimensionMismatch(format!(
                "emission is {:?} but transitions are {:?}",
                emit.shape(),
                trans.logits().shape()
            )));
        }
        if !emit.is_finite() {
            return Err(Error::NonFinite("lattice emissions".into()));
        }
        Ok(Self { emit, trans })
    }

    pub fn from_parts(emit: Matrix, trans: Matrix) -> Result<Self> {
        Self::new(emit, Arc::new(TransitionTable::new(trans)?))
    }

    pub fn len(&self) -> usize {
        self.emit.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.emit.rows() == 0
    }

    pub fn num_states(&self) -> usize {
        self.emit.cols()
    }

    pub fn emit(&self) -> &Matrix {
        &self.emit
    }

    pub fn trans(&self) -> &Matrix {
        self.trans.logits()
    }

    pub fn transition_table(&self) -> &Arc<TransitionTable> {
        &self.trans
    }

    /// Adds `c` to every emission entry.
    pub fn shift_emissions(&self, c: f64) -> Self {
        let mut emit = self.emit.clone();
        emit.as_mut_slice().iter_mut().for_each(|v| *v += c);
        Self {
            emit,
            trans: Arc::clone(&self.trans),
        }
    }
}

/// Total score of a state path with labels `labels`.
///
/// Returns −∞ when some state lies outside its label's block. Transitions are
/// counted on the `T − 1` interior edges. Accumulation order is
/// `((emit₀ + trans₀₁) + emit₁) + …`, the same order Viterbi uses, so a decoded
/// path's energy equals its Viterbi score bit for bit.
pub fn energy(
    lattice: &Lattice,
    states: &[usize],
    labels: &[usize],
    partition: &StatePartition,
) -> Result<f64> {
    let t_len = lattice.len();
    if states.len() != t_len {
        return Err(Error::LengthMismatch {
            expected: t_len,
            got: states.len(),
        });
    }
    if labels.len() != t_len {
        return Err(Error::LengthMismatch {
            expected: t_len,
            got: labels.len(),
        });
    }
    let m = lattice.num_states();
    if partition.num_states() != m {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} states, lattice has {m}",
            partition.num_states()
        )));
    }
    for &z in states {
        if z >= m {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: z,
                size: m,
            });
        }
    }
    for &y in labels {
        partition.check_label(y)?;
    }
    if states
        .iter()
        .zip(labels)
        .any(|(&z, &y)| partition.label_of(z) != y)
    {
        return Ok(f64::NEG_INFINITY);
    }
    let emit = lattice.emit();
    let trans = lattice.trans();
    let mut score = emit[(0, states[0])];
    for t in 1..t_len {
        score = score + trans[(states[t - 1], states[t])] + emit[(t, states[t])];
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step() {
        let lat = Lattice::from_parts(Matrix::from_rows(&[vec![2.0, 3.0]]), Matrix::zeros(2, 2))
            .unwrap();
        let p = StatePartition::new(2, 1).unwrap();
        assert_eq!(energy(&lat, &[1], &[1], &p).unwrap(), 3.0);
    }

    #[test]
    fn partition_violation_is_neg_infinity() {
        let lat = Lattice::from_parts(Matrix::zeros(2, 4), Matrix::zeros(4, 4)).unwrap();
        let p = StatePartition::new(2, 2).unwrap();
        assert_eq!(energy(&lat, &[0, 1], &[0, 1], &p).unwrap(), f64::NEG_INFINITY);
        assert_eq!(energy(&lat, &[0, 3], &[0, 1], &p).unwrap(), 0.0);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let emit = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random_range(-3.0..3.0)).collect());
        let trans = Matrix::from_vec(2, 2, (0..4).map(|_| rng.random_range(-3.0..3.0)).collect());
        let lat = Lattice::from_parts(emit.clone(), trans.clone()).unwrap();
        let p = StatePartition::new(2, 1).unwrap();
        let path = [1, 0, 1];
        let direct = emit[(0, 1)] + emit[(1, 0)] + emit[(2, 1)] + trans[(1, 0)] + trans[(0, 1)];
        let e = energy(&lat, &path, &path, &p).unwrap();
        assert!((e - direct).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let lat = Lattice::from_parts(Matrix::zeros(2, 2), Matrix::zeros(2, 2)).unwrap();
        let p = StatePartition::new(2, 1).unwrap();
        assert!(energy(&lat, &[0], &[0, 0], &p).is_err());
        assert!(energy(&lat, &[0, 2], &[0, 0], &p).is_err());
        assert!(energy(&lat, &[0, 0], &[0, 5], &p).is_err());
        assert!(Lattice::from_parts(Matrix::zeros(0, 2), Matrix::zeros(2, 2)).is_err());
        assert!(Lattice::from_parts(Matrix::zeros(1, 2), Matrix::zeros(3, 3)).is_err());
        let mut bad = Matrix::zeros(1, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(Lattice::from_parts(bad, Matrix::zeros(2, 2)).is_err());
    }
}
