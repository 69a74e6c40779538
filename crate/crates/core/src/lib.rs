//! Latent-state linear-chain CRF whose state-transition potentials are
//! factorized into low-rank state embeddings.
//!
//! Each output label owns a block of hidden states. Inference runs exact
//! forward-backward and Viterbi over the hidden-state lattice; training
//! maximizes the conditional likelihood of the gold labels with the hidden
//! states marginalized out.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod labels;
pub mod lattice;
pub mod matrix;
pub mod model;
pub mod model_io;
pub mod partition;
pub mod train;
pub mod transition;

pub use error::{Error, Result};
pub use inference::{
    clamped_log_z, forward_log_z, posterior_marginals, sequence_log_likelihood, viterbi,
    DecodeResult, Marginals,
};
pub use labels::LabelSet;
pub use lattice::{energy, Lattice, TransitionTable};
pub use matrix::Matrix;
pub use partition::StatePartition;
pub use transition::{transition_logits, TransitionFactors, TransitionMode};
