//! Minibatch Adam training with dev-F1 early stopping.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::eval::{score, Scores};
use crate::model::ModelParams;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::gradient::{batch_gradients, encode_corpus, map_indexed, EncodedSequence, Noise};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Dev evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Inverted dropout on the emission feature vector, train time only.
    pub dropout: f64,
    /// Probability of replacing a singleton training word by `<UNK>`.
    pub unk_replace: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm cap; `None` leaves gradients untouched.
    pub clip_norm: Option<f64>,
    /// Weight of the `½·l2·‖θ‖²` penalty added to the batch loss.
    pub l2: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            max_epochs: 200,
            patience: 25,
            eval_every: 1,
            seed: 0,
            dropout: 0.5,
            unk_replace: 0.5,
            adam: AdamConfig::default(),
            clip_norm: None,
            l2: 0.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval-every must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.unk_replace) {
            return bad(format!("unk replacement {} must lie in [0, 1]", self.unk_replace));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 weight {} must be non-negative", self.l2));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip norm {c} must be positive"));
            }
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_nll: f64,
    pub dev: Option<DevScore>,
    pub elapsed: Duration,
}

impl EpochRecord {
    /// `epoch\tNLL\tP\tR\tF1`; dev columns are `-` on epochs without an
    /// evaluation. Wall-clock time is left out so logs are reproducible.
    pub fn log_line(&self) -> String {
        match self.dev {
            Some(d) => format!(
                "{}\t{:.6}\t{:.2}\t{:.2}\t{:.2}",
                self.epoch, self.train_nll, d.precision, d.recall, d.f1
            ),
            None => format!("{}\t{:.6}\t-\t-\t-", self.epoch, self.train_nll),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; the last epoch when there is no dev set.
    pub best_epoch: usize,
    pub best_dev_f1: Option<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
    /// Optimizer state after the final epoch.
    pub adam: AdamState,
}

/// Patience counter over dev F1; only a strict improvement resets it.
#[derive(Debug, Clone)]
struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    fn observe(&mut self, f1: f64) -> Verdict {
        if self.best.is_none_or(|b| f1 > b) {
            self.best = Some(f1);
            self.since_best = 0;
            return Verdict::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }
}

pub(crate) fn build_pool(workers: usize) -> Result<Option<ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Viterbi labels for every sentence, in corpus order.
pub fn predict(
    params: &ModelParams,
    corpus: &[TokenSequence],
    pool: Option<&ThreadPool>,
) -> Result<Vec<Vec<String>>> {
    let table = params.transition_table()?;
    map_indexed(pool, corpus.len(), |i| {
        params
            .decode_with(&corpus[i], &table)
            .map(|d| params.labels.decode(&d.labels))
    })
    .into_iter()
    .collect()
}

/// Scores Viterbi predictions against the gold labels of `corpus`.
pub fn evaluate(params: &ModelParams, corpus: &[TokenSequence], pool: Option<&ThreadPool>) -> Result<Scores> {
    let gold = corpus
        .iter()
        .enumerate()
        .map(|(i, s)| s.labels.clone().ok_or(Error::MissingLabels(i)))
        .collect::<Result<Vec<_>>>()?;
    let predicted = predict(params, corpus, pool)?;
    score(&gold, &predicted)
}

pub fn train(
    params: ModelParams,
    train_set: &[TokenSequence],
    dev: Option<&[TokenSequence]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(params, train_set, dev, config, None, |_| {})
}

/// Like [`train`], resuming from `adam` when given and calling `observer`
/// after every epoch.
pub fn train_with(
    mut params: ModelParams,
    train_set: &[TokenSequence],
    dev: Option<&[TokenSequence]>,
    config: &TrainConfig,
    adam: Option<AdamState>,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus("training"));
    }
    let dev = match dev {
        Some(d) if d.is_empty() => return Err(Error::EmptyCorpus("dev")),
        other => other,
    };
    let encoded = encode_corpus(train_set, &params)?;
    let pool = build_pool(config.workers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = adam.unwrap_or_else(|| AdamState::new(config.adam));
    let noise = Noise {
        dropout: config.dropout,
        unk_replace: config.unk_replace,
    };

    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut epochs = Vec::new();
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut steps = 0;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedSequence> = chunk.iter().map(|&i| &encoded[i]).collect();
            let (nll, mut grads) =
                batch_gradients(&params, &batch, Some((noise, &mut rng)), pool.as_ref())?;
            if !grads.is_finite() {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}")));
            }
            if config.l2 > 0.0 {
                for ((_, g), (_, p)) in grads.tensors_mut().into_iter().zip(params.tensors()) {
                    for (gv, pv) in g.as_mut_slice().iter_mut().zip(p.as_slice()) {
                        *gv += config.l2 * pv;
                    }
                }
            }
            if let Some(cap) = config.clip_norm {
                let norm = grads.global_norm();
                if norm > cap {
                    grads.scale(cap / norm);
                }
            }
            adam_step(&mut params, &grads, &mut adam)?;
            nll_sum += nll * batch.len() as f64;
            steps += 1;
        }

        let dev_score = match dev {
            Some(d) if epoch % config.eval_every == 0 => {
                let s = evaluate(&params, d, pool.as_ref())?;
                Some(DevScore {
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                })
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_nll: nll_sum / encoded.len() as f64,
            dev: dev_score,
            elapsed: start.elapsed(),
        };
        observer(&record);
        epochs.push(record);

        if let Some(d) = dev_score {
            match stopping.observe(d.f1) {
                Verdict::Improved => best = Some((d.f1, epoch, params.clone())),
                Verdict::Continue => {}
                Verdict::Stop => break,
            }
        }
    }

    let (params, best_epoch, best_dev_f1) = match best {
        Some((f1, epoch, p)) => (p, epoch, Some(f1)),
        None => (params, epochs.len(), None),
    };
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            epochs,
            best_epoch,
            best_dev_f1,
            steps,
        },
        adam,
    })
}
