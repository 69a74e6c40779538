use rand::Rng;

use super::vocab::Vocabulary;
use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::partition::StatePartition;

/// Width of the character convolution window.
pub const CHAR_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmissionConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub hidden_dim: usize,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            word_dim: 100,
            char_dim: 25,
            hidden_dim: 100,
        }
    }
}

/// Learnable tensors of the token featurizer and the emission projection.
///
/// `f = relu([word_emb; char_feat] · hidden_w + hidden_b)` and the per-state
/// emission score is `f · proj_w + proj_b`. The character feature is the
/// max over positions of a width-3 convolution over character embeddings;
/// `conv_w` rows are indexed by `offset * char_dim + input_channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionParams {
    pub word_emb: Matrix,
    pub char_emb: Matrix,
    pub conv_w: Matrix,
    pub conv_b: Matrix,
    pub hidden_w: Matrix,
    pub hidden_b: Matrix,
    pub proj_w: Matrix,
    pub proj_b: Matrix,
}

/// Word index and boundary-padded character indices of one token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenInput {
    pub word: usize,
    pub chars: Vec<usize>,
}

/// Forward activations of one token, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct TokenEncoding {
    /// `[word_emb; char_feat]`.
    pub input: Vec<f64>,
    /// Window index that won the max-pool, per char channel.
    pub char_argmax: Vec<usize>,
    pub pre: Vec<f64>,
    /// Hidden feature vector `f`.
    pub feature: Vec<f64>,
}

impl EmissionParams {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        config: &EmissionConfig,
        vocab_size: usize,
        char_table_size: usize,
        num_states: usize,
        rng: &mut R,
    ) -> Self {
        let dc = config.char_dim;
        Self {
            word_emb: Matrix::glorot(vocab_size, config.word_dim, rng),
            char_emb: Matrix::glorot(char_table_size, dc, rng),
            conv_w: Matrix::glorot(CHAR_WINDOW * dc, dc, rng),
            conv_b: Matrix::zeros(1, dc),
            hidden_w: Matrix::glorot(config.word_dim + dc, config.hidden_dim, rng),
            hidden_b: Matrix::zeros(1, config.hidden_dim),
            proj_w: Matrix::glorot(config.hidden_dim, num_states, rng),
            proj_b: Matrix::zeros(1, num_states),
        }
    }

    pub fn config(&self) -> EmissionConfig {
        EmissionConfig {
            word_dim: self.word_emb.cols(),
            char_dim: self.char_emb.cols(),
            hidden_dim: self.hidden_w.cols(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.proj_w.cols()
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            word_emb: z(&self.word_emb),
            char_emb: z(&self.char_emb),
            conv_w: z(&self.conv_w),
            conv_b: z(&self.conv_b),
            hidden_w: z(&self.hidden_w),
            hidden_b: z(&self.hidden_b),
            proj_w: z(&self.proj_w),
            proj_b: z(&self.proj_b),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("emit.word_emb", &self.word_emb),
            ("emit.char_emb", &self.char_emb),
            ("emit.conv_w", &self.conv_w),
            ("emit.conv_b", &self.conv_b),
            ("emit.hidden_w", &self.hidden_w),
            ("emit.hidden_b", &self.hidden_b),
            ("emit.proj_w", &self.proj_w),
            ("emit.proj_b", &self.proj_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("emit.word_emb", &mut self.word_emb),
            ("emit.char_emb", &mut self.char_emb),
            ("emit.conv_w", &mut self.conv_w),
            ("emit.conv_b", &mut self.conv_b),
            ("emit.hidden_w", &mut self.hidden_w),
            ("emit.hidden_b", &mut self.hidden_b),
            ("emit.proj_w", &mut self.proj_w),
            ("emit.proj_b", &mut self.proj_b),
        ]
    }

    /// Checks that all tensor shapes agree with each other and with `m` states.
    pub fn check_shapes(&self, num_states: usize) -> Result<()> {
        let dw = self.word_emb.cols();
        let dc = self.char_emb.cols();
        let h = self.hidden_w.cols();
        let expect = [
            ("emit.conv_w", self.conv_w.shape(), (CHAR_WINDOW * dc, dc)),
            ("emit.conv_b", self.conv_b.shape(), (1, dc)),
            ("emit.hidden_w", self.hidden_w.shape(), (dw + dc, h)),
            ("emit.hidden_b", self.hidden_b.shape(), (1, h)),
            ("emit.proj_w", self.proj_w.shape(), (h, num_states)),
            ("emit.proj_b", self.proj_b.shape(), (1, num_states)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self, input: &TokenInput) -> TokenEncoding {
        let dw = self.word_emb.cols();
        let dc = self.char_emb.cols();
        let h = self.hidden_w.cols();
        let windows = input.chars.len() + 1 - CHAR_WINDOW;

        let mut x = Vec::with_capacity(dw + dc);
        x.extend_from_slice(self.word_emb.row(input.word));
        let mut char_feat = vec![f64::NEG_INFINITY; dc];
        let mut char_argmax = vec![0; dc];
        let mut conv = vec![0.0; dc];
        for p in 0..windows {
            conv.copy_from_slice(self.conv_b.row(0));
            for w in 0..CHAR_WINDOW {
                let emb = self.char_emb.row(input.chars[p + w]);
                for (i, &e) in emb.iter().enumerate() {
                    if e == 0.0 {
                        continue;
                    }
                    for (o, &k) in conv.iter_mut().zip(self.conv_w.row(w * dc + i)) {
                        *o += e * k;
                    }
                }
            }
            for o in 0..dc {
                if conv[o] > char_feat[o] {
                    char_feat[o] = conv[o];
                    char_argmax[o] = p;
                }
            }
        }
        x.extend_from_slice(&char_feat);

        let mut pre = self.hidden_b.row(0).to_vec();
        for (k, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in pre.iter_mut().zip(self.hidden_w.row(k)) {
                *o += xv * wv;
            }
        }
        debug_assert_eq!(pre.len(), h);
        let feature = pre.iter().map(|&v| v.max(0.0)).collect();
        TokenEncoding {
            input: x,
            char_argmax,
            pre,
            feature,
        }
    }

    /// Emission scores of one (possibly dropped-out) feature vector.
    pub fn project(&self, feature: &[f64]) -> Vec<f64> {
        let mut out = self.proj_b.row(0).to_vec();
        for (k, &f) in feature.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.proj_w.row(k)) {
                *o += f * w;
            }
        }
        out
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the token's feature vector `f` is `grad_feature`.
    pub fn backprop_token(
        &self,
        input: &TokenInput,
        enc: &TokenEncoding,
        grad_feature: &[f64],
        grads: &mut EmissionParams,
    ) {
        let dw = self.word_emb.cols();
        let dc = self.char_emb.cols();
        let grad_pre: Vec<f64> = grad_feature
            .iter()
            .zip(&enc.pre)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
        if grad_pre.iter().all(|g| *g == 0.0) {
            return;
        }
        for (o, g) in grads.hidden_b.row_mut(0).iter_mut().zip(&grad_pre) {
            *o += g;
        }
        let mut grad_x = vec![0.0; dw + dc];
        for (k, &xv) in enc.input.iter().enumerate() {
            let row = grads.hidden_w.row_mut(k);
            for (o, &g) in row.iter_mut().zip(&grad_pre) {
                *o += xv * g;
            }
            grad_x[k] = dot(self.hidden_w.row(k), &grad_pre);
        }
        for (o, g) in grads.word_emb.row_mut(input.word).iter_mut().zip(&grad_x[..dw]) {
            *o += g;
        }
        let grad_char = &grad_x[dw..];
        for (o, &g) in grad_char.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.conv_b[(0, o)] += g;
            let p = enc.char_argmax[o];
            for w in 0..CHAR_WINDOW {
                let c = input.chars[p + w];
                for i in 0..dc {
                    let row = w * dc + i;
                    grads.conv_w[(row, o)] += g * self.char_emb[(c, i)];
                    grads.char_emb[(c, i)] += g * self.conv_w[(row, o)];
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }
}

/// Hidden feature vector `f_t` of a token; depends on the token alone.
pub fn encode_token(token: &str, params: &EmissionParams, vocab: &Vocabulary) -> Vec<f64> {
    params.encode(&vocab.token_input(token)).feature
}

/// `T × M` emission scores of a sentence without dropout.
pub fn emission_scores(
    sentence: &TokenSequence,
    params: &EmissionParams,
    vocab: &Vocabulary,
    partition: &StatePartition,
) -> Result<Matrix> {
    let m = partition.num_states();
    if params.num_states() != m {
        return Err(Error::DimensionMismatch(format!(
            "emission projection has {} states, partition has {m}",
            params.num_states()
        )));
    }
    let mut emit = Matrix::zeros(sentence.len(), m);
    for (t, tok) in sentence.tokens.iter().enumerate() {
        let f = encode_token(tok, params, vocab);
        emit.row_mut(t).copy_from_slice(&params.project(&f));
    }
    Ok(emit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, m: usize) -> (Vocabulary, EmissionParams) {
        let corpus = vec![TokenSequence::unlabeled(["Peter", "Blackburn", "in", "a"]).unwrap()];
        let vocab = build_vocabulary(&corpus, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EmissionConfig {
            word_dim: 6,
            char_dim: 4,
            hidden_dim: 5,
        };
        let params = EmissionParams::glorot(&cfg, vocab.len(), vocab.char_table_len(), m, &mut rng);
        (vocab, params)
    }

    #[test]
    fn zero_params_give_zero_features() {
        let (vocab, params) = setup(1, 3);
        let zero = params.zeros_like();
        assert!(encode_token("Peter", &zero, &vocab).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_char_token() {
        let (vocab, params) = setup(2, 3);
        let input = vocab.token_input("a");
        assert_eq!(input.chars.len() + 1 - CHAR_WINDOW, 1);
        let f = encode_token("a", &params, &vocab);
        assert_eq!(f.len(), 5);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn changing_a_character_keeps_the_word_embedding() {
        let (vocab, params) = setup(3, 3);
        let a = params.encode(&vocab.token_input("in"));
        let mut other = vocab.token_input("in");
        other.chars[1] = vocab.char_id('P');
        let b = params.encode(&other);
        assert_eq!(a.input[..6], b.input[..6]);
        assert_ne!(a.input[6..], b.input[6..]);
    }

    #[test]
    fn constant_bias_emissions() {
        let (vocab, mut params) = setup(4, 3);
        params.proj_w.fill(0.0);
        params.proj_b.fill(1.5);
        let p = StatePartition::new(3, 1).unwrap();
        let s = TokenSequence::unlabeled(["Peter", "in"]).unwrap();
        let emit = emission_scores(&s, &params, &vocab, &p).unwrap();
        assert!(emit.as_slice().iter().all(|v| *v == 1.5));
    }

    #[test]
    fn scalar_projection() {
        let (_, mut params) = setup(5, 2);
        params.proj_w = Matrix::from_rows(&[vec![1.0, -1.0]]);
        params.proj_b = Matrix::zeros(1, 2);
        assert_eq!(params.project(&[2.0]), vec![2.0, -2.0]);
    }

    #[test]
    fn projection_matches_matrix_vector_product() {
        let (vocab, params) = setup(6, 4);
        let p = StatePartition::new(2, 2).unwrap();
        let s = TokenSequence::unlabeled(["Blackburn", "xyz"]).unwrap();
        let emit = emission_scores(&s, &params, &vocab, &p).unwrap();
        for (t, tok) in s.tokens.iter().enumerate() {
            let f = Matrix::from_vec(1, 5, encode_token(tok, &params, &vocab));
            let expected = f.matmul(&params.proj_w);
            for z in 0..4 {
                let v = expected[(0, z)] + params.proj_b[(0, z)];
                assert!((emit[(t, z)] - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn position_independent() {
        let (vocab, params) = setup(7, 2);
        let p = StatePartition::new(2, 1).unwrap();
        let s = TokenSequence::unlabeled(["in", "Peter", "in"]).unwrap();
        let emit = emission_scores(&s, &params, &vocab, &p).unwrap();
        assert_eq!(emit.row(0), emit.row(2));
    }
}
