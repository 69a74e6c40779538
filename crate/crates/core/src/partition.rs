//! Deterministic many-to-one map from hidden states to output labels.
//!
//! States are laid out in contiguous, equal-sized blocks: with `k` states per
//! label, label `y` owns states `y*k .. (y+1)*k`. A state/label pair outside the
//! partition has score −∞, every pair inside it scores 0.

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatePartition {
    num_labels: usize,
    states_per_label: usize,
}

impl StatePartition {
    pub fn new(num_labels: usize, states_per_label: usize) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::InvalidPartition("label count must be ≥ 1".into()));
        }
        if states_per_label == 0 {
            return Err(Error::InvalidPartition(
                "states per label must be ≥ 1".into(),
            ));
        }
        Ok(Self {
            num_labels,
            states_per_label,
        })
    }

    /// Builds the partition for `num_states` total states, which must be a
    /// multiple of `num_labels`.
    pub fn with_total_states(num_labels: usize, num_states: usize) -> Result<Self> {
        if num_labels == 0 || num_states % num_labels != 0 || num_states == 0 {
            return Err(Error::InvalidPartition(format!(
                "{num_states} states cannot be split evenly over {num_labels} labels"
            )));
        }
        Self::new(num_labels, num_states / num_labels)
    }

    pub fn num_states(&self) -> usize {
        self.num_labels * self.states_per_label
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn states_per_label(&self) -> usize {
        self.states_per_label
    }

    #[inline]
    pub fn label_of(&self, state: usize) -> usize {
        debug_assert!(state < self.num_states());
        state / self.states_per_label
    }

    #[inline]
    pub fn states_of(&self, label: usize) -> Range<usize> {
        debug_assert!(label < self.num_labels);
        label * self.states_per_label..(label + 1) * self.states_per_label
    }

    /// ψ_zy: 0 inside the partition, −∞ outside.
    #[inline]
    pub fn state_label_score(&self, state: usize, label: usize) -> f64 {
        if self.label_of(state) == label {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn labels_of(&self, states: &[usize]) -> Vec<usize> {
        states.iter().map(|&z| self.label_of(z)).collect()
    }

    pub(crate) fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_labels {
            return Err(Error::IndexOutOfRange {
                what: "label",
                index: label,
                size: self.num_labels,
            });
        }
        Ok(())
    }
}
