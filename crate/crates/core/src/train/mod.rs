//! Likelihood gradients, the Adam optimizer and the training loop.

mod adam;
mod gradient;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradient::{
    batch_gradients, batch_nll, check_gradient_entries, encode_corpus, encode_sequence,
    finite_difference_check, lattice_gradients, nll_and_gradients, sample_entries, EncodedSequence, EntryCheck,
    LatticeGradient, Noise, ParamEntry,
};
pub use trainer::{
    evaluate, predict, train, train_with, DevScore, EpochRecord, TrainConfig, TrainOutcome,
    TrainReport,
};

pub(crate) use gradient::map_indexed;
pub(crate) use trainer::build_pool;
