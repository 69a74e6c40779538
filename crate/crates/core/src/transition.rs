//! State-transition potentials: a rank-r factor pair `U·Vᵀ` or a full table.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionMode {
    LowRank,
    FullRank,
}

impl TransitionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransitionMode::LowRank => "low-rank",
            TransitionMode::FullRank => "full-rank",
        }
    }
}

impl std::str::FromStr for TransitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low-rank" | "lowrank" | "elcrf" => Ok(TransitionMode::LowRank),
            "full-rank" | "fullrank" | "ldcrf" => Ok(TransitionMode::FullRank),
            other => Err(Error::Config(format!("unknown transition mode `{other}`"))),
        }
    }
}

/// Transition log-potentials. Entry `(i, j)` of the realized table scores the
/// move from state `i` to state `j`.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionFactors {
    /// `U` and `V` are both `M × r`; the table is `U·Vᵀ`.
    LowRank { u: Matrix, v: Matrix },
    /// Unconstrained `M × M` table.
    FullRank { table: Matrix },
}

impl TransitionFactors {
    pub fn low_rank(u: Matrix, v: Matrix) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::DimensionMismatch(format!(
                "U is {:?} but V is {:?}",
                u.shape(),
                v.shape()
            )));
        }
        if u.cols() == 0 || u.cols() > u.rows() {
            return Err(Error::DimensionMismatch(format!(
                "rank {} must lie in [1, {}]",
                u.cols(),
                u.rows()
            )));
        }
        Ok(TransitionFactors::LowRank { u, v })
    }

    pub fn full_rank(table: Matrix) -> Result<Self> {
        if table.rows() != table.cols() {
            return Err(Error::DimensionMismatch(format!(
                "transition table must be square, got {:?}",
                table.shape()
            )));
        }
        Ok(TransitionFactors::FullRank { table })
    }

    pub fn glorot<R: Rng + ?Sized>(
        mode: TransitionMode,
        num_states: usize,
        rank: usize,
        rng: &mut R,
    ) -> Result<Self> {
        match mode {
            TransitionMode::LowRank => {
                let u = Matrix::glorot(num_states, rank, rng);
                let v = Matrix::glorot(num_states, rank, rng);
                Self::low_rank(u, v)
            }
            TransitionMode::FullRank => {
                Self::full_rank(Matrix::glorot(num_states, num_states, rng))
            }
        }
    }

    pub fn mode(&self) -> TransitionMode {
        match self {
            TransitionFactors::LowRank { .. } => TransitionMode::LowRank,
            TransitionFactors::FullRank { .. } => TransitionMode::FullRank,
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            TransitionFactors::LowRank { u, .. } => u.rows(),
            TransitionFactors::FullRank { table } => table.rows(),
        }
    }

    /// Embedding rank; the state count for a full table.
    pub fn rank(&self) -> usize {
        match self {
            TransitionFactors::LowRank { u, .. } => u.cols(),
            TransitionFactors::FullRank { table } => table.rows(),
        }
    }

    /// Realized `M × M` transition log-potential table.
    pub fn logits(&self) -> Matrix {
        match self {
            TransitionFactors::LowRank { u, v } => u.matmul_t(v),
            TransitionFactors::FullRank { table } => table.clone(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            TransitionFactors::LowRank { u, v } => TransitionFactors::LowRank {
                u: Matrix::zeros(u.rows(), u.cols()),
                v: Matrix::zeros(v.rows(), v.cols()),
            },
            TransitionFactors::FullRank { table } => TransitionFactors::FullRank {
                table: Matrix::zeros(table.rows(), table.cols()),
            },
        }
    }

    /// Pulls a gradient on the realized table back onto the factors:
    /// `∂U = G·V`, `∂V = Gᵀ·U`.
    pub fn backprop(&self, table_grad: &Matrix) -> Self {
        match self {
            TransitionFactors::LowRank { u, v } => TransitionFactors::LowRank {
                u: table_grad.matmul(v),
                v: table_grad.t_matmul(u),
            },
            TransitionFactors::FullRank { .. } => TransitionFactors::FullRank {
                table: table_grad.clone(),
            },
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            TransitionFactors::LowRank { u, v } => vec![("trans.u", u), ("trans.v", v)],
            TransitionFactors::FullRank { table } => vec![("trans.full", table)],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        match self {
            TransitionFactors::LowRank { u, v } => vec![("trans.u", u), ("trans.v", v)],
            TransitionFactors::FullRank { table } => vec![("trans.full", table)],
        }
    }
}

/// `U·Vᵀ` for the low-rank case, the table itself otherwise.
pub fn transition_logits(factors: &TransitionFactors) -> Matrix {
    factors.logits()
}
