//! The full parameter set and convenience inference entry points.

use std::sync::Arc;

use rand::Rng;

use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::features::{emission_scores, EmissionConfig, EmissionParams, Vocabulary};
use crate::inference::{viterbi, DecodeResult};
use crate::labels::LabelSet;
use crate::lattice::{Lattice, TransitionTable};
use crate::matrix::Matrix;
use crate::partition::StatePartition;
use crate::transition::{TransitionFactors, TransitionMode};

/// Architecture choices fixed at initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub states_per_label: usize,
    /// Embedding rank `r` of the transition factors; ignored in full-rank mode.
    pub rank: usize,
    pub mode: TransitionMode,
    pub emission: EmissionConfig,
}

impl ModelConfig {
    /// 16, or 8 for a 16-state model, capped at the state count.
    pub fn default_rank(num_states: usize) -> usize {
        let r = if num_states == 16 { 8 } else { 16 };
        r.min(num_states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub labels: LabelSet,
    pub partition: StatePartition,
    pub vocab: Vocabulary,
    pub emission: EmissionParams,
    pub transition: TransitionFactors,
}

/// Gradient (or any other per-parameter quantity) with the same tensor layout
/// as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub emission: EmissionParams,
    pub transition: TransitionFactors,
}

impl ModelParams {
    /// Glorot-initialised model over `labels` with `config.states_per_label`
    /// hidden states per label.
    pub fn init<R: Rng + ?Sized>(
        labels: LabelSet,
        vocab: Vocabulary,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let partition = StatePartition::new(labels.len(), config.states_per_label)?;
        let m = partition.num_states();
        if config.mode == TransitionMode::LowRank && (config.rank == 0 || config.rank > m) {
            return Err(Error::Config(format!(
                "rank {} must lie in [1, {m}] for {m} states",
                config.rank
            )));
        }
        let emission = EmissionParams::glorot(
            &config.emission,
            vocab.len(),
            vocab.char_table_len(),
            m,
            rng,
        );
        let transition = TransitionFactors::glorot(config.mode, m, config.rank, rng)?;
        Self::from_parts(labels, partition, vocab, emission, transition)
    }

    pub fn from_parts(
        labels: LabelSet,
        partition: StatePartition,
        vocab: Vocabulary,
        emission: EmissionParams,
        transition: TransitionFactors,
    ) -> Result<Self> {
        let m = partition.num_states();
        if partition.num_labels() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "partition covers {} labels, label set has {}",
                partition.num_labels(),
                labels.len()
            )));
        }
        if transition.num_states() != m {
            return Err(Error::DimensionMismatch(format!(
                "transition factors have {} states, partition has {m}",
                transition.num_states()
            )));
        }
        if emission.word_emb.rows() != vocab.len()
            || emission.char_emb.rows() != vocab.char_table_len()
        {
            return Err(Error::DimensionMismatch(
                "embedding tables do not match the vocabulary".into(),
            ));
        }
        emission.check_shapes(m)?;
        Ok(Self {
            labels,
            partition,
            vocab,
            emission,
            transition,
        })
    }

    pub fn num_states(&self) -> usize {
        self.partition.num_states()
    }

    pub fn transition_table(&self) -> Result<Arc<TransitionTable>> {
        Ok(Arc::new(TransitionTable::new(self.transition.logits())?))
    }

    pub fn lattice(&self, sentence: &TokenSequence) -> Result<Lattice> {
        self.lattice_with(sentence, self.transition_table()?)
    }

    pub fn lattice_with(
        &self,
        sentence: &TokenSequence,
        table: Arc<TransitionTable>,
    ) -> Result<Lattice> {
        let emit = emission_scores(sentence, &self.emission, &self.vocab, &self.partition)?;
        Lattice::new(emit, table)
    }

    pub fn decode_with(
        &self,
        sentence: &TokenSequence,
        table: &Arc<TransitionTable>,
    ) -> Result<DecodeResult> {
        viterbi(&self.lattice_with(sentence, Arc::clone(table))?, &self.partition)
    }

    pub fn decode(&self, sentence: &TokenSequence) -> Result<DecodeResult> {
        self.decode_with(sentence, &self.transition_table()?)
    }

    /// Viterbi label strings for `sentence`.
    pub fn tag(&self, sentence: &TokenSequence) -> Result<Vec<String>> {
        Ok(self.labels.decode(&self.decode(sentence)?.labels))
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut t = self.emission.tensors();
        t.extend(self.transition.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut t = self.emission.tensors_mut();
        t.extend(self.transition.tensors_mut());
        t
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            emission: self.emission.zeros_like(),
            transition: self.transition.zeros_like(),
        }
    }
}

impl Gradients {
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut t = self.emission.tensors();
        t.extend(self.transition.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut t = self.emission.tensors_mut();
        t.extend(self.transition.tensors_mut());
        t
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
