//! Negative log-likelihood of gold label sequences and its gradient.
//!
//! For one sentence, the derivative of `log Z_free − log Z_clamped` with respect
//! to a lattice cell is the free posterior minus the clamped posterior of that
//! cell. The emission part flows back through the projection and the token
//! encoder; the transition part is summed over time and pulled back through
//! the factorization.
//!
//! Token encodings depend on the token alone, so each distinct token of a
//! batch is encoded and backpropagated once.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::features::{TokenEncoding, TokenInput};
use crate::inference::{expected_counts, forward_log_z};
use crate::lattice::{Lattice, TransitionTable};
use crate::matrix::{dot, Matrix};
use crate::model::{Gradients, ModelParams};
use crate::partition::StatePartition;

/// A gold-labeled sentence mapped to vocabulary and label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub inputs: Vec<TokenInput>,
    pub labels: Vec<usize>,
}

pub fn encode_sequence(
    seq: &TokenSequence,
    index: usize,
    params: &ModelParams,
) -> Result<EncodedSequence> {
    let labels = seq.labels.as_ref().ok_or(Error::MissingLabels(index))?;
    let labels = params.labels.encode(labels)?;
    let inputs = seq.tokens.iter().map(|t| params.vocab.token_input(t)).collect();
    Ok(EncodedSequence { inputs, labels })
}

pub fn encode_corpus(corpus: &[TokenSequence], params: &ModelParams) -> Result<Vec<EncodedSequence>> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, s)| encode_sequence(s, i, params))
        .collect()
}

/// Train-time stochasticity: dropout on feature vectors and random
/// replacement of singleton words by `<UNK>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub dropout: f64,
    pub unk_replace: f64,
}

/// Runs `f` over `0..n`, on `pool` when given; results keep index order.
pub(crate) fn map_indexed<T, F>(pool: Option<&ThreadPool>, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match pool {
        Some(pool) if pool.current_num_threads() > 1 => {
            pool.install(|| (0..n).into_par_iter().map(&f).collect())
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Distinct token inputs of a batch and, per sentence, the index of each
/// position's entry.
struct TokenTable {
    inputs: Vec<TokenInput>,
    positions: Vec<Vec<usize>>,
}

impl TokenTable {
    fn build(sentences: impl Iterator<Item = Vec<TokenInput>>) -> Self {
        let mut index: HashMap<TokenInput, usize> = HashMap::new();
        let mut inputs = Vec::new();
        let positions = sentences
            .map(|seq| {
                seq.into_iter()
                    .map(|input| {
                        *index.entry(input.clone()).or_insert_with(|| {
                            inputs.push(input);
                            inputs.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        Self { inputs, positions }
    }
}

/// NLL of one lattice and its derivatives with respect to the emission scores
/// (`T × M`) and the transition logits (`M × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGradient {
    pub nll: f64,
    pub emit: Matrix,
    pub trans: Matrix,
}

/// Free-minus-clamped posteriors of `lattice` given gold `labels`.
pub fn lattice_gradients(
    lattice: &Lattice,
    labels: &[usize],
    partition: &StatePartition,
) -> Result<LatticeGradient> {
    let free = expected_counts(lattice, None)?;
    let clamped = expected_counts(lattice, Some((labels, partition)))?;
    let mut emit = free.node;
    for (a, b) in emit.as_mut_slice().iter_mut().zip(clamped.node.as_slice()) {
        *a -= b;
    }
    let mut trans = free.trans;
    for (a, b) in trans.as_mut_slice().iter_mut().zip(clamped.trans.as_slice()) {
        *a -= b;
    }
    Ok(LatticeGradient {
        nll: (free.log_z - clamped.log_z).max(0.0),
        emit,
        trans,
    })
}

struct SequenceGrad {
    nll: f64,
    trans: Matrix,
    proj_w: Matrix,
    proj_b: Vec<f64>,
    /// Gradient w.r.t. the undropped feature vector, per position.
    features: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn sequence_grad(
    params: &ModelParams,
    table: &Arc<TransitionTable>,
    encodings: &[TokenEncoding],
    positions: &[usize],
    labels: &[usize],
    dropout: f64,
    seed: u64,
) -> Result<SequenceGrad> {
    let emission = &params.emission;
    let t_len = positions.len();
    let m = params.num_states();
    let h = emission.hidden_w.cols();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_scale = 1.0 / (1.0 - dropout);
    let mut scales: Vec<Vec<f64>> = Vec::new();
    let mut feats: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut emit = Matrix::zeros(t_len, m);
    for (t, &u) in positions.iter().enumerate() {
        let mut f = encodings[u].feature.clone();
        if dropout > 0.0 {
            let scale: Vec<f64> = (0..h)
                .map(|_| if rng.random::<f64>() < dropout { 0.0 } else { keep_scale })
                .collect();
            f.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
            scales.push(scale);
        }
        emit.row_mut(t).copy_from_slice(&emission.project(&f));
        feats.push(f);
    }
    let lattice = Lattice::new(emit, Arc::clone(table))?;
    let LatticeGradient { nll, emit, trans } =
        lattice_gradients(&lattice, labels, &params.partition)?;

    let mut proj_w = Matrix::zeros(h, m);
    let mut proj_b = vec![0.0; m];
    let mut features = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let g = emit.row(t);
        for (o, v) in proj_b.iter_mut().zip(g) {
            *o += v;
        }
        let mut gf = vec![0.0; h];
        for (k, &fv) in feats[t].iter().enumerate() {
            gf[k] = dot(emission.proj_w.row(k), g);
            if fv != 0.0 {
                for (o, gv) in proj_w.row_mut(k).iter_mut().zip(g) {
                    *o += fv * gv;
                }
            }
        }
        if let Some(scale) = scales.get(t) {
            gf.iter_mut().zip(scale).for_each(|(v, s)| *v *= s);
        }
        features.push(gf);
    }
    Ok(SequenceGrad {
        nll,
        trans,
        proj_w,
        proj_b,
        features,
    })
}

/// Mean NLL of `batch` and its gradient averaged over sentences.
///
/// With `noise`, singleton words are swapped for `<UNK>` and dropout masks
/// are drawn from `rng`; the draws happen sequentially in batch order, so the
/// result does not depend on the number of worker threads.
pub fn batch_gradients<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[&EncodedSequence],
    noise: Option<(Noise, &mut R)>,
    pool: Option<&ThreadPool>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus("gradient batch"));
    }
    let (dropout, seeds, sentences): (f64, Vec<u64>, Vec<Vec<TokenInput>>) = match noise {
        None => (
            0.0,
            vec![0; batch.len()],
            batch.iter().map(|s| s.inputs.clone()).collect(),
        ),
        Some((noise, rng)) => {
            let mut seeds = Vec::with_capacity(batch.len());
            let mut sentences = Vec::with_capacity(batch.len());
            for seq in batch {
                let inputs = seq
                    .inputs
                    .iter()
                    .map(|input| {
                        let mut input = input.clone();
                        if noise.unk_replace > 0.0
                            && params.vocab.is_singleton(input.word)
                            && rng.random::<f64>() < noise.unk_replace
                        {
                            input.word = 0;
                        }
                        input
                    })
                    .collect();
                sentences.push(inputs);
                seeds.push(rng.random::<u64>());
            }
            (noise.dropout, seeds, sentences)
        }
    };
    let tokens = TokenTable::build(sentences.into_iter());
    let encodings: Vec<TokenEncoding> = map_indexed(pool, tokens.inputs.len(), |u| {
        params.emission.encode(&tokens.inputs[u])
    });
    let table = params.transition_table()?;

    let per_seq = map_indexed(pool, batch.len(), |i| {
        sequence_grad(
            params,
            &table,
            &encodings,
            &tokens.positions[i],
            &batch[i].labels,
            dropout,
            seeds[i],
        )
    });

    let m = params.num_states();
    let h = params.emission.hidden_w.cols();
    let mut grads = params.zero_gradients();
    let mut trans = Matrix::zeros(m, m);
    let mut feature_grads = vec![vec![0.0; h]; tokens.inputs.len()];
    let mut nll = 0.0;
    for (i, result) in per_seq.into_iter().enumerate() {
        let sg = result?;
        nll += sg.nll;
        trans.add_assign(&sg.trans);
        grads.emission.proj_w.add_assign(&sg.proj_w);
        for (o, v) in grads.emission.proj_b.row_mut(0).iter_mut().zip(&sg.proj_b) {
            *o += v;
        }
        for (&u, gf) in tokens.positions[i].iter().zip(&sg.features) {
            for (o, v) in feature_grads[u].iter_mut().zip(gf) {
                *o += v;
            }
        }
    }
    for (u, gf) in feature_grads.iter().enumerate() {
        params
            .emission
            .backprop_token(&tokens.inputs[u], &encodings[u], gf, &mut grads.emission);
    }
    grads.transition = params.transition.backprop(&trans);

    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((nll * scale, grads))
}

/// Mean NLL without gradients and without noise.
pub fn batch_nll(params: &ModelParams, batch: &[&EncodedSequence]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus("batch"));
    }
    let tokens = TokenTable::build(batch.iter().map(|s| s.inputs.clone()));
    let features: Vec<Vec<f64>> = tokens
        .inputs
        .iter()
        .map(|input| params.emission.encode(input).feature)
        .collect();
    let table = params.transition_table()?;
    let m = params.num_states();
    let mut total = 0.0;
    for (seq, positions) in batch.iter().zip(&tokens.positions) {
        let mut emit = Matrix::zeros(positions.len(), m);
        for (t, &u) in positions.iter().enumerate() {
            emit.row_mut(t).copy_from_slice(&params.emission.project(&features[u]));
        }
        let lattice = Lattice::new(emit, Arc::clone(&table))?;
        let clamped =
            crate::inference::clamped_log_z(&lattice, &seq.labels, &params.partition)?;
        total += (forward_log_z(&lattice) - clamped).max(0.0);
    }
    Ok(total / batch.len() as f64)
}

/// Mean NLL and gradient of labeled sentences, deterministic (no dropout).
pub fn nll_and_gradients(batch: &[TokenSequence], params: &ModelParams) -> Result<(f64, Gradients)> {
    let encoded = encode_corpus(batch, params)?;
    let refs: Vec<&EncodedSequence> = encoded.iter().collect();
    batch_gradients::<ChaCha8Rng>(params, &refs, None, None)
}

/// One scalar parameter: tensor position in [`ModelParams::tensors`] order and
/// flat row-major index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamEntry {
    pub tensor: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryCheck {
    pub entry: ParamEntry,
    pub name: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "finite-difference step {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    Ok(())
}

/// Compares `analytic` against central differences of the mean NLL at the
/// given entries. Relative error is `|a − n| / max(1e−8, |n|)`.
pub fn check_gradient_entries(
    params: &ModelParams,
    batch: &[TokenSequence],
    analytic: &Gradients,
    epsilon: f64,
    entries: &[ParamEntry],
) -> Result<Vec<EntryCheck>> {
    check_epsilon(epsilon)?;
    let encoded = encode_corpus(batch, params)?;
    let refs: Vec<&EncodedSequence> = encoded.iter().collect();
    let analytic_tensors = analytic.tensors();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(entries.len());
    for &entry in entries {
        let (name, original) = {
            let tensors = probe.tensors();
            let (name, t) = *tensors.get(entry.tensor).ok_or(Error::IndexOutOfRange {
                what: "tensor",
                index: entry.tensor,
                size: tensors.len(),
            })?;
            let v = *t.as_slice().get(entry.index).ok_or(Error::IndexOutOfRange {
                what: "parameter",
                index: entry.index,
                size: t.len(),
            })?;
            (name, v)
        };
        let set = |p: &mut ModelParams, v: f64| {
            p.tensors_mut()[entry.tensor].1.as_mut_slice()[entry.index] = v;
        };
        set(&mut probe, original + epsilon);
        let plus = batch_nll(&probe, &refs)?;
        set(&mut probe, original - epsilon);
        let minus = batch_nll(&probe, &refs)?;
        set(&mut probe, original);
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic_tensors[entry.tensor].1.as_slice()[entry.index];
        out.push(EntryCheck {
            entry,
            name,
            analytic: a,
            numeric,
            relative_error: (a - numeric).abs() / numeric.abs().max(1e-8),
        });
    }
    Ok(out)
}

/// `samples` entries drawn round-robin over tensors (so every parameter group
/// is covered) and uniformly within each tensor.
pub fn sample_entries<R: Rng + ?Sized>(params: &ModelParams, samples: usize, rng: &mut R) -> Vec<ParamEntry> {
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    (0..samples)
        .map(|s| {
            let tensor = s % sizes.len();
            ParamEntry {
                tensor,
                index: rng.random_range(0..sizes[tensor]),
            }
        })
        .collect()
}

/// Largest relative error between analytic and central-difference gradients
/// over `samples` randomly chosen parameters.
pub fn finite_difference_check<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[TokenSequence],
    epsilon: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let (_, analytic) = nll_and_gradients(batch, params)?;
    let entries = sample_entries(params, samples, rng);
    let checks = check_gradient_entries(params, batch, &analytic, epsilon, &entries)?;
    Ok(checks
        .iter()
        .map(|c| c.relative_error)
        .fold(0.0, f64::max))
}
