//! Per-token featurization and the emission projection ψ_zf.

mod embeddings;
mod encoder;
mod vocab;

pub use embeddings::load_embeddings;
pub use encoder::{
    emission_scores, encode_token, EmissionConfig, EmissionParams, TokenEncoding, TokenInput,
    CHAR_WINDOW,
};
pub use vocab::{build_vocabulary, normalize_word, Vocabulary, BOUNDARY_CHAR, UNK_CHAR, UNK_WORD};
