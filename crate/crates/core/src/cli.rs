//! Command-line front end.
//!
//! Every tunable can come from a flag, from a `key = value` config file
//! (`--config`), or from its default, in that order of precedence. Config keys
//! are the long flag names. `ELCRF_SEED` stands in for `--seed` when the flag
//! is absent.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    rank_spectrum, render_block_table, render_spectrum, state_activation_report,
    transition_block_summary,
};
use crate::data::{
    generate_synthetic, read_conll, read_conll_rows, write_conll, SyntheticTaskSpec, TokenSequence,
};
use crate::error::Error;
use crate::eval::score;
use crate::features::{build_vocabulary, load_embeddings, EmissionConfig};
use crate::labels::LabelSet;
use crate::model::{ModelConfig, ModelParams};
use crate::model_io::{load_model, save_model};
use crate::train::{
    build_pool, finite_difference_check, predict, train_with, AdamConfig, TrainConfig,
};
use crate::transition::TransitionMode;

#[derive(Debug, Parser)]
#[command(name = "elcrf", version, about = "Latent-state CRF sequence tagger")]
struct Cli {
    /// `key = value` file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic bracket-memory corpus in CoNLL format.
    Synth(SynthArgs),
    /// Train a model and write it, with optimizer state, to a file.
    Train(TrainArgs),
    /// Append a predicted label column to a CoNLL file.
    Tag(TagArgs),
    /// Print a conlleval-style score report.
    Eval(EvalArgs),
    /// Write state activation, block and spectrum reports.
    Inspect(InspectArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SeedArg {
    #[arg(long, env = "ELCRF_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    p_inside: Option<f64>,
    #[arg(long)]
    p_outside: Option<f64>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Total number of hidden states; must be a multiple of the label count.
    #[arg(long)]
    states: Option<usize>,
    /// Hidden states per label; used when `--states` is absent.
    #[arg(long)]
    states_per_label: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// `low-rank` or `full-rank`.
    #[arg(long)]
    mode: Option<TransitionMode>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    char_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch log; defaults to the model path with `.log` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a model file written by an earlier `train`.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Pretrained word vectors, one `token v1 v2 ...` line per word.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_epsilon: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    unk_replace: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct TagArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// CoNLL file. Without `--model` the last two columns are gold and
    /// predicted labels; with it the last column is gold.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Labeled CoNLL file; a small synthetic corpus when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Sentences drawn for the synthetic corpus.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parsed `key = value` lines. Keys accept `-` or `_`.
#[derive(Debug, Default)]
struct ConfigFile {
    path: PathBuf,
    values: HashMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), i + 1))
            })?;
            values.insert(key.trim().replace('_', "-"), value.trim().to_string());
        }
        Ok(Self {
            path: path.to_path_buf(),
            values,
        })
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                CliError::Usage(format!("{}: bad value `{raw}` for {key}: {e}", self.path.display()))
            }),
        }
    }

    /// Flag, else config value, else `None`.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("--{key} is required")))
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for data or model errors, 2 for usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = ConfigFile::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::Train(a) => train_cmd(a, &cfg),
        Command::Tag(a) => tag(a, &cfg),
        Command::Eval(a) => eval_cmd(a, &cfg),
        Command::Inspect(a) => inspect(a, &cfg),
        Command::Gradcheck(a) => gradcheck(a, &cfg),
    });
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn seed(arg: &SeedArg, cfg: &ConfigFile) -> CliResult<u64> {
    cfg.or(arg.seed, "seed", 0)
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn synth(a: SynthArgs, cfg: &ConfigFile) -> CliResult<i32> {
    let defaults = SyntheticTaskSpec::default();
    let spec = SyntheticTaskSpec {
        min_len: cfg.or(a.min_len, "min-len", defaults.min_len)?,
        max_len: cfg.or(a.max_len, "max-len", defaults.max_len)?,
        max_pairs: cfg.or(a.max_pairs, "max-pairs", defaults.max_pairs)?,
        p_ambiguous_inside: cfg.or(a.p_inside, "p-inside", defaults.p_ambiguous_inside)?,
        p_ambiguous_outside: cfg.or(a.p_outside, "p-outside", defaults.p_ambiguous_outside)?,
        seed: seed(&a.seed, cfg)?,
        ..defaults
    };
    let count = cfg.or(a.count, "count", 1000)?;
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    let corpus = generate_synthetic(&spec, count)?;
    let mut w = output(out.as_deref())?;
    write_conll(&mut w, &corpus)?;
    w.flush()?;
    Ok(0)
}

fn model_config(
    a: &ModelArgs,
    cfg: &ConfigFile,
    num_labels: usize,
    default_k: usize,
) -> CliResult<ModelConfig> {
    let states: Option<usize> = cfg.pick(a.states, "states")?;
    let per_label: Option<usize> = cfg.pick(a.states_per_label, "states-per-label")?;
    let k = match (states, per_label) {
        (Some(m), Some(k)) if m != k * num_labels => {
            return usage(format!("--states {m} disagrees with --states-per-label {k}"));
        }
        (Some(m), _) => {
            if m == 0 || m % num_labels != 0 {
                return usage(format!(
                    "--states {m} is not a positive multiple of the {num_labels} labels"
                ));
            }
            m / num_labels
        }
        (None, Some(k)) => k,
        (None, None) => default_k,
    };
    if k == 0 {
        return usage("--states-per-label must be at least 1");
    }
    let m = k * num_labels;
    let mode = cfg.or(a.mode, "mode", TransitionMode::LowRank)?;
    let rank = match mode {
        TransitionMode::FullRank => m,
        TransitionMode::LowRank => cfg.or(a.rank, "rank", ModelConfig::default_rank(m))?,
    };
    if mode == TransitionMode::LowRank && !(1..=m).contains(&rank) {
        return usage(format!("--rank {rank} must lie in [1, {m}]"));
    }
    let d = EmissionConfig::default();
    Ok(ModelConfig {
        states_per_label: k,
        rank,
        mode,
        emission: EmissionConfig {
            word_dim: cfg.or(a.word_dim, "word-dim", d.word_dim)?,
            char_dim: cfg.or(a.char_dim, "char-dim", d.char_dim)?,
            hidden_dim: cfg.or(a.hidden_dim, "hidden-dim", d.hidden_dim)?,
        },
    })
}

fn label_set(corpora: &[&[TokenSequence]]) -> CliResult<LabelSet> {
    let mut labels = Vec::new();
    for (i, seq) in corpora.iter().flat_map(|c| c.iter()).enumerate() {
        labels.extend(seq.labels.as_ref().ok_or(Error::MissingLabels(i))?.iter().map(|l| l.as_str()));
    }
    Ok(LabelSet::observed(labels))
}

fn train_cmd(a: TrainArgs, cfg: &ConfigFile) -> CliResult<i32> {
    let train_path: PathBuf = cfg.required(a.train, "train")?;
    let out: PathBuf = cfg.required(a.out, "out")?;
    let dev_path: Option<PathBuf> = cfg.pick(a.dev, "dev")?;
    let log_path: PathBuf = cfg
        .pick(a.log, "log")?
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", out.display())));
    let seed = seed(&a.seed, cfg)?;
    let defaults = TrainConfig::default();
    let adam = AdamConfig {
        learning_rate: cfg.or(a.lr, "lr", defaults.adam.learning_rate)?,
        beta1: cfg.or(a.beta1, "beta1", defaults.adam.beta1)?,
        beta2: cfg.or(a.beta2, "beta2", defaults.adam.beta2)?,
        epsilon: cfg.or(a.adam_epsilon, "adam-epsilon", defaults.adam.epsilon)?,
    };
    let config = TrainConfig {
        batch_size: cfg.or(a.batch_size, "batch-size", defaults.batch_size)?,
        max_epochs: cfg.or(a.epochs, "epochs", defaults.max_epochs)?,
        patience: cfg.or(a.patience, "patience", defaults.patience)?,
        eval_every: cfg.or(a.eval_every, "eval-every", defaults.eval_every)?,
        seed,
        dropout: cfg.or(a.dropout, "dropout", defaults.dropout)?,
        unk_replace: cfg.or(a.unk_replace, "unk-replace", defaults.unk_replace)?,
        adam,
        clip_norm: cfg.pick(a.clip_norm, "clip-norm")?,
        l2: cfg.or(a.l2, "l2", defaults.l2)?,
        workers: cfg.or(a.workers, "workers", defaults.workers)?,
    };
    if let Err(e) = config.validate() {
        return usage(e.to_string());
    }
    let resume: Option<PathBuf> = cfg.pick(a.resume, "resume")?;
    let embeddings: Option<PathBuf> = cfg.pick(a.embeddings, "embeddings")?;
    let min_count = cfg.or(a.min_count, "min-count", 1)?;

    let train_set = read_conll(&train_path)?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus("training").into());
    }
    let dev = dev_path.as_deref().map(read_conll).transpose()?;
    let (params, adam_state) = match &resume {
        Some(path) => load_model(path)?,
        None => {
            let mut corpora: Vec<&[TokenSequence]> = vec![&train_set];
            if let Some(d) = &dev {
                corpora.push(d);
            }
            let labels = label_set(&corpora)?;
            let model_cfg = model_config(&a.model, cfg, labels.len(), 4)?;
            let vocab = build_vocabulary(&train_set, min_count);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ModelParams::init(labels, vocab, &model_cfg, &mut rng)?;
            if let Some(path) = &embeddings {
                let (table, hits) = load_embeddings(
                    path,
                    &params.vocab,
                    model_cfg.emission.word_dim,
                    &mut rng,
                )?;
                eprintln!("embeddings: {hits} of {} words found", params.vocab.len());
                params.emission.word_emb = table;
            }
            (params, None)
        }
    };
    eprintln!(
        "training {} sentences, {} labels, {} states, {} rank {}",
        train_set.len(),
        params.labels.len(),
        params.num_states(),
        params.transition.mode().as_str(),
        params.transition.rank()
    );

    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    let mut log_error = None;
    let outcome = train_with(params, &train_set, dev.as_deref(), &config, adam_state, |r| {
        eprintln!("{}\t{:.2}s", r.log_line(), r.elapsed.as_secs_f64());
        if let Err(e) = writeln!(log, "{}", r.log_line()) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }
    log.flush()?;
    save_model(&out, &outcome.params, Some(&outcome.adam))?;
    let report = &outcome.report;
    match report.best_dev_f1 {
        Some(f1) => println!("best epoch {} dev F1 {f1:.2}", report.best_epoch),
        None => println!("trained {} epochs", report.epochs.len()),
    }
    Ok(0)
}

fn tag(a: TagArgs, cfg: &ConfigFile) -> CliResult<i32> {
    let model_path: PathBuf = cfg.required(a.model, "model")?;
    let input: PathBuf = cfg.required(a.input, "input")?;
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    let pool = build_pool(cfg.or(a.workers, "workers", 1)?)?;
    let (params, _) = load_model(&model_path)?;
    let sentences = read_conll_rows(&input)?;
    let corpus = sentences
        .iter()
        .map(|s| TokenSequence::new(s.rows.iter().map(|r| r[0].clone()).collect(), None))
        .collect::<Result<Vec<_>, _>>()?;
    let predicted = predict(&params, &corpus, pool.as_ref())?;
    let mut w = output(out.as_deref())?;
    for (sentence, labels) in sentences.iter().zip(&predicted) {
        for (row, label) in sentence.rows.iter().zip(labels) {
            writeln!(w, "{} {label}", row.join(" "))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(0)
}

fn eval_cmd(a: EvalArgs, cfg: &ConfigFile) -> CliResult<i32> {
    let input: PathBuf = cfg.required(a.input, "input")?;
    let model: Option<PathBuf> = cfg.pick(a.model, "model")?;
    let scores = match model {
        Some(path) => {
            let pool = build_pool(cfg.or(a.workers, "workers", 1)?)?;
            let (params, _) = load_model(&path)?;
            let corpus = read_conll(&input)?;
            crate::train::evaluate(&params, &corpus, pool.as_ref())?
        }
        None => {
            let sentences = read_conll_rows(&input)?;
            let mut gold = Vec::with_capacity(sentences.len());
            let mut predicted = Vec::with_capacity(sentences.len());
            for s in &sentences {
                if s.rows[0].len() < 3 {
                    return Err(Error::Parse {
                        path: input.clone(),
                        line: s.first_line,
                        message: "need token, gold and predicted columns".into(),
                    }
                    .into());
                }
                let col = |back: usize| -> Vec<String> {
                    s.rows.iter().map(|r| r[r.len() - back].clone()).collect()
                };
                gold.push(col(2));
                predicted.push(col(1));
            }
            score(&gold, &predicted)?
        }
    };
    print!("{}", scores.report());
    Ok(0)
}

fn inspect(a: InspectArgs, cfg: &ConfigFile) -> CliResult<i32> {
    let model_path: PathBuf = cfg.required(a.model, "model")?;
    let input: PathBuf = cfg.required(a.input, "input")?;
    let out_dir: PathBuf = cfg.required(a.out_dir, "out-dir")?;
    let top_k = cfg.or(a.top_k, "top-k", 10)?;
    let pool = build_pool(cfg.or(a.workers, "workers", 1)?)?;
    let (params, _) = load_model(&model_path)?;
    let corpus = read_conll_rows(&input)?
        .iter()
        .map(|s| TokenSequence::new(s.rows.iter().map(|r| r[0].clone()).collect(), None))
        .collect::<Result<Vec<_>, _>>()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("inspection").into());
    }
    fs::create_dir_all(&out_dir)?;
    let report = state_activation_report(&params, &corpus, top_k, pool.as_ref())?;
    fs::write(out_dir.join("activation.txt"), report.to_text())?;
    fs::write(out_dir.join("activation.csv"), report.to_csv())?;
    let blocks = transition_block_summary(&params);
    fs::write(
        out_dir.join("blocks.txt"),
        render_block_table(&blocks, params.labels.names()),
    )?;
    fs::write(out_dir.join("spectrum.txt"), render_spectrum(&rank_spectrum(&params)))?;
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, cfg: &ConfigFile) -> CliResult<i32> {
    let seed = seed(&a.seed, cfg)?;
    let samples = cfg.or(a.samples, "samples", 200)?;
    let epsilon = cfg.or(a.epsilon, "epsilon", 1e-5)?;
    let threshold = cfg.or(a.threshold, "threshold", 1e-5)?;
    let input: Option<PathBuf> = cfg.pick(a.input, "input")?;
    let corpus = match input {
        Some(path) => read_conll(path)?,
        None => {
            let count = cfg.or(a.count, "count", 8)?;
            generate_synthetic(&SyntheticTaskSpec::with_seed(seed), count)?
        }
    };
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("gradient check").into());
    }
    let labels = label_set(&[&corpus])?;
    // 16 states when the label count allows it.
    let default_k = (16 / labels.len()).max(1);
    let model_cfg = model_config(&a.model, cfg, labels.len(), default_k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(labels, build_vocabulary(&corpus, 1), &model_cfg, &mut rng)?;
    let err = match finite_difference_check(&params, &corpus, epsilon, samples, &mut rng) {
        Err(Error::Config(msg)) => return usage(msg),
        other => other?,
    };
    println!("max relative error: {err:.3e} over {samples} parameters");
    Ok(if err <= threshold { 0 } else { 1 })
}
