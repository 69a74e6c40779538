//! Binary model files.
//!
//! Layout, all integers unsigned 32-bit little-endian unless noted:
//!
//! ```text
//! "ELCRF" version
//! labels: count, then (len, utf-8 bytes) per label
//! states_per_label  rank  mode(u8: 0 low-rank, 1 full-rank)
//! word_dim  char_dim  hidden_dim
//! vocabulary words: count, then (len, bytes, frequency u64) per word
//! vocabulary chars: count, then one code point per char
//! tensors: count, then per tensor (name len, name, ndim, dims..., f64 values)
//! adam flag (u8); if 1: learning_rate beta1 beta2 epsilon (f64) step (u64)
//!   and a tensor list holding `adam.m.<name>` / `adam.v.<name>` moments
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{EmissionConfig, Vocabulary};
use crate::labels::LabelSet;
use crate::matrix::Matrix;
use crate::model::{ModelConfig, ModelParams};
use crate::train::{AdamConfig, AdamState};
use crate::transition::TransitionMode;

const MAGIC: &[u8; 5] = b"ELCRF";
pub const FORMAT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        Ok(self.0.write_all(s.as_bytes())?)
    }

    fn tensors(&mut self, tensors: &[(String, &Matrix)]) -> Result<()> {
        self.u32(tensors.len())?;
        for (name, m) in tensors {
            self.str(name)?;
            self.u32(2)?;
            self.u32(m.rows())?;
            self.u32(m.cols())?;
            let mut buf = Vec::with_capacity(m.len() * 8);
            for v in m.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.0.write_all(&buf)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0; N];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()?;
        let mut buf = Vec::new();
        (&mut self.0).take(len as u64).read_to_end(&mut buf)?;
        if buf.len() != len {
            return Err(Error::Format("truncated string".into()));
        }
        String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    fn tensors(&mut self) -> Result<HashMap<String, Matrix>> {
        let count = self.u32()?;
        let mut out = HashMap::with_capacity(count);
        for _ in 0..count {
            let name = self.str()?;
            let ndim = self.u32()?;
            let dims = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims[..] {
                [n] => (1, n),
                [r, c] => (r, c),
                _ => return Err(Error::Format(format!("tensor `{name}` has {ndim} dimensions"))),
            };
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            let mut buf = Vec::new();
            (&mut self.0).take(n as u64).read_to_end(&mut buf)?;
            if buf.len() != n {
                return Err(Error::Format(format!("tensor `{name}` is truncated")));
            }
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let m = Matrix::from_vec(rows, cols, data);
            if out.insert(name.clone(), m).is_some() {
                return Err(Error::Format(format!("duplicate tensor `{name}`")));
            }
        }
        Ok(out)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of model file".into())
    } else {
        Error::Io(e)
    }
}

/// Serializes `params` and, for checkpoints, the optimizer state.
pub fn write_model<W: Write>(writer: W, params: &ModelParams, adam: Option<&AdamState>) -> Result<()> {
    let mut w = Writer(writer);
    w.0.write_all(MAGIC)?;
    w.u32(FORMAT_VERSION as usize)?;
    w.u32(params.labels.len())?;
    for name in params.labels.names() {
        w.str(name)?;
    }
    w.u32(params.partition.states_per_label())?;
    w.u32(params.transition.rank())?;
    w.u8(match params.transition.mode() {
        TransitionMode::LowRank => 0,
        TransitionMode::FullRank => 1,
    })?;
    let cfg = params.emission.config();
    w.u32(cfg.word_dim)?;
    w.u32(cfg.char_dim)?;
    w.u32(cfg.hidden_dim)?;
    let vocab = &params.vocab;
    w.u32(vocab.len())?;
    for (word, &count) in vocab.words().iter().zip(vocab.counts()) {
        w.str(word)?;
        w.u64(count)?;
    }
    w.u32(vocab.chars().len())?;
    for &c in vocab.chars() {
        w.u32(c as usize)?;
    }
    let named = params.tensors();
    w.tensors(
        &named
            .iter()
            .map(|(n, m)| (n.to_string(), *m))
            .collect::<Vec<_>>(),
    )?;
    match adam {
        None => w.u8(0)?,
        Some(state) => {
            w.u8(1)?;
            let c = state.config;
            for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
                w.f64(v)?;
            }
            w.u64(state.step)?;
            let mut moments = Vec::new();
            if !state.m.is_empty() {
                if state.m.len() != named.len() || state.v.len() != named.len() {
                    return Err(Error::DimensionMismatch(
                        "optimizer moments do not match the model tensors".into(),
                    ));
                }
                for ((name, _), (m, v)) in named.iter().zip(state.m.iter().zip(&state.v)) {
                    moments.push((format!("adam.m.{name}"), m));
                    moments.push((format!("adam.v.{name}"), v));
                }
            }
            w.tensors(&moments)?;
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<(ModelParams, Option<AdamState>)> {
    let mut r = Reader(reader);
    if &r.bytes::<5>()? != MAGIC {
        return Err(Error::Format("not an elcrf model file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!("unsupported model format version {version}")));
    }
    let n_labels = r.u32()?;
    let names = (0..n_labels).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let labels = LabelSet::new(&names)?;
    let states_per_label = r.u32()?;
    let rank = r.u32()?;
    let mode = match r.u8()? {
        0 => TransitionMode::LowRank,
        1 => TransitionMode::FullRank,
        other => return Err(Error::Format(format!("unknown transition mode {other}"))),
    };
    let emission = EmissionConfig {
        word_dim: r.u32()?,
        char_dim: r.u32()?,
        hidden_dim: r.u32()?,
    };
    let n_words = r.u32()?;
    let mut words = Vec::with_capacity(n_words);
    let mut counts = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(r.str()?);
        counts.push(r.u64()?);
    }
    let n_chars = r.u32()?;
    let chars = (0..n_chars)
        .map(|_| {
            let code = r.u32()? as u32;
            char::from_u32(code).ok_or_else(|| Error::Format(format!("bad code point {code}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_parts(words, counts, chars);

    let config = ModelConfig {
        states_per_label,
        rank,
        mode,
        emission,
    };
    // Shapes come from a throwaway initialisation; every value is overwritten.
    let mut params = ModelParams::init(labels, vocab, &config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut stored = r.tensors()?;
    let mut order = Vec::new();
    for (name, slot) in params.tensors_mut() {
        let m = take_tensor(&mut stored, name, slot.shape())?;
        *slot = m;
        order.push(name);
    }
    reject_extra(&stored)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }

    let adam = match r.u8()? {
        0 => None,
        1 => {
            let config = AdamConfig {
                learning_rate: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let mut state = AdamState::new(config);
            state.step = r.u64()?;
            let mut moments = r.tensors()?;
            if !moments.is_empty() {
                for ((name, p), _) in params.tensors().into_iter().zip(&order) {
                    state.m.push(take_tensor(&mut moments, &format!("adam.m.{name}"), p.shape())?);
                    state.v.push(take_tensor(&mut moments, &format!("adam.v.{name}"), p.shape())?);
                }
            }
            reject_extra(&moments)?;
            Some(state)
        }
        other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
    };
    Ok((params, adam))
}

fn take_tensor(
    stored: &mut HashMap<String, Matrix>,
    name: &str,
    shape: (usize, usize),
) -> Result<Matrix> {
    let m = stored
        .remove(name)
        .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
    if m.shape() != shape {
        return Err(Error::Format(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            m.shape()
        )));
    }
    Ok(m)
}

fn reject_extra(stored: &HashMap<String, Matrix>) -> Result<()> {
    let mut extra: Vec<&String> = stored.keys().collect();
    extra.sort();
    match extra.first() {
        Some(name) => Err(Error::Format(format!("unexpected tensor `{name}`"))),
        None => Ok(()),
    }
}

pub fn save_model(path: &Path, params: &ModelParams, adam: Option<&AdamState>) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), params, adam)
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Option<AdamState>)> {
    read_model(BufReader::new(File::open(path)?))
}
