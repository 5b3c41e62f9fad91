//! Bidirectional LSTM text encoder.
//!
//! Each word is represented by the concatenation of the forward and
//! backward hidden states at its position; the sentence vector is the
//! concatenation of the two final hidden states. Word features form the
//! columns of e ∈ R^{D×T} with D = 2 * hidden size.

use crate::error::{Error, Result};
use crate::rng::{self, stream_rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct TextDims {
    pub vocab: usize,
    /// Embedding width E.
    pub embed: usize,
    /// Hidden size per direction; word feature dim D = 2 * hidden.
    pub hidden: usize,
    pub max_len: usize,
}

impl TextDims {
    pub fn feature_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// One LSTM direction. Gate layout along the 4H axis: input, forget,
/// cell, output.
#[derive(Clone)]
pub struct LstmCell {
    pub w_x: Tensor, // [4H, E]
    pub w_h: Tensor, // [4H, H]
    pub bias: Tensor, // [4H]
}

impl LstmCell {
    fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor, hidden: usize) -> (Tensor, Tensor) {
        let e = x.numel();
        let pre = self
            .w_x
            .matmul(&x.reshape(&[e, 1]))
            .add(&self.w_h.matmul(&h.reshape(&[hidden, 1])))
            .reshape(&[4 * hidden])
            .add(&self.bias);
        let i = pre.narrow0(0, hidden).sigmoid();
        let f = pre.narrow0(hidden, hidden).sigmoid();
        let g = pre.narrow0(2 * hidden, hidden).tanh();
        let o = pre.narrow0(3 * hidden, hidden).sigmoid();
        let c_next = f.mul(c).add(&i.mul(&g));
        let h_next = o.mul(&c_next.tanh());
        (h_next, c_next)
    }

    /// Run over an embedded sequence, returning the hidden state at every
    /// position in input order.
    fn run(&self, inputs: &[Tensor], hidden: usize) -> Vec<Tensor> {
        let mut h = Tensor::zeros(&[hidden]);
        let mut c = Tensor::zeros(&[hidden]);
        let mut states = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h2, c2) = self.step(x, &h, &c, hidden);
            h = h2;
            c = c2;
            states.push(h.clone());
        }
        states
    }
}

#[derive(Clone)]
pub struct TextEncoderParams {
    pub embed: Tensor, // [V, E]
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub dims: TextDims,
}

/// Word feature matrix e (D×T) plus the sentence vector.
#[derive(Clone)]
pub struct TextFeatures {
    /// e, shape [D, T]; column i is the feature of word i.
    pub words: Tensor,
    /// Sentence vector, shape [D].
    pub sentence: Tensor,
    pub len: usize,
}

/// Deterministic init: uniform ±1/sqrt(fan_in); gate biases 0 except the
/// forget gate, which starts at 1.
pub fn init_text_encoder(seed: u64, dims: TextDims) -> TextEncoderParams {
    let mut rng = stream_rng(seed, rng::stream::INIT_TEXT, 0);
    let h = dims.hidden;
    let cell = |rng: &mut rand_chacha::ChaCha8Rng| {
        let w_x = uniform_param(&[4 * h, dims.embed], dims.embed, rng);
        let w_h = uniform_param(&[4 * h, h], h, rng);
        let mut b = vec![0.0; 4 * h];
        for v in &mut b[h..2 * h] {
            *v = 1.0;
        }
        LstmCell {
            w_x,
            w_h,
            bias: Tensor::param(&[4 * h], b),
        }
    };
    let embed = uniform_param(&[dims.vocab, dims.embed], dims.embed, &mut rng);
    let fwd = cell(&mut rng);
    let bwd = cell(&mut rng);
    TextEncoderParams { embed, fwd, bwd, dims }
}

pub(crate) fn uniform_param(
    shape: &[usize],
    fan_in: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Tensor {
    use rand::Rng;
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..shape.iter().product())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::param(shape, data)
}

/// Encode a token sequence into per-word features and a sentence vector.
pub fn encode_text(tokens: &[usize], params: &TextEncoderParams) -> Result<TextFeatures> {
    let t = tokens.len();
    if t == 0 {
        return Err(Error::Contract("cannot encode an empty token sequence".into()));
    }
    if t > params.dims.max_len {
        return Err(Error::Contract(format!(
            "sequence length {t} exceeds max_len {}",
            params.dims.max_len
        )));
    }
    let vocab = params.embed.shape()[0];
    for &idx in tokens {
        if idx >= vocab {
            return Err(Error::Vocab(format!(
                "token index {idx} out of range for vocabulary of {vocab}"
            )));
        }
    }

    let inputs: Vec<Tensor> = tokens.iter().map(|&i| params.embed.row(i)).collect();
    let h = params.dims.hidden;
    let fwd_states = params.fwd.run(&inputs, h);
    let rev_inputs: Vec<Tensor> = inputs.iter().rev().cloned().collect();
    let bwd_rev = params.bwd.run(&rev_inputs, h);
    // bwd_rev[k] belongs to original position t-1-k
    let bwd_states: Vec<Tensor> = (0..t).map(|i| bwd_rev[t - 1 - i].clone()).collect();

    let cols: Vec<Tensor> = (0..t)
        .map(|i| Tensor::concat0(&[&fwd_states[i], &bwd_states[i]]))
        .collect();
    let col_refs: Vec<&Tensor> = cols.iter().collect();
    let words = Tensor::stack_cols(&col_refs);
    // last forward state is at position t-1; the backward cell's last
    // state is the one it computed at position 0.
    let sentence = Tensor::concat0(&[&fwd_states[t - 1], &bwd_states[0]]);
    Ok(TextFeatures { words, sentence, len: t })
}

impl TextEncoderParams {
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("text.embed".into(), self.embed.clone()),
            ("text.fwd.w_x".into(), self.fwd.w_x.clone()),
            ("text.fwd.w_h".into(), self.fwd.w_h.clone()),
            ("text.fwd.bias".into(), self.fwd.bias.clone()),
            ("text.bwd.w_x".into(), self.bwd.w_x.clone()),
            ("text.bwd.w_h".into(), self.bwd.w_h.clone()),
            ("text.bwd.bias".into(), self.bwd.bias.clone()),
        ]
    }

    /// Copy with gradient tracking removed (for the GAN phase, where the
    /// pretrained encoders stay fixed).
    pub fn frozen(&self) -> TextEncoderParams {
        TextEncoderParams {
            embed: self.embed.detach(),
            fwd: LstmCell {
                w_x: self.fwd.w_x.detach(),
                w_h: self.fwd.w_h.detach(),
                bias: self.fwd.bias.detach(),
            },
            bwd: LstmCell {
                w_x: self.bwd.w_x.detach(),
                w_h: self.bwd.w_h.detach(),
                bias: self.bwd.bias.detach(),
            },
            dims: self.dims,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> TextDims {
        TextDims { vocab: 12, embed: 6, hidden: 8, max_len: 16 }
    }

    #[test]
    fn shape_contract_single_word() {
        let p = init_text_encoder(1, dims());
        let out = encode_text(&[3], &p).unwrap();
        assert_eq!(out.words.shape(), &[16, 1]);
        assert_eq!(out.sentence.shape(), &[16]);
    }

    #[test]
    fn paper_scale_feature_dim() {
        // D=256 config accepted: H=128 gives e in R^{256xT}
        let d = TextDims { vocab: 12, embed: 6, hidden: 128, max_len: 16 };
        let p = init_text_encoder(1, d);
        let out = encode_text(&[1, 2, 3, 4, 5], &p).unwrap();
        assert_eq!(out.words.shape(), &[256, 5]);
    }

    #[test]
    fn empty_sequence_is_contract_error() {
        let p = init_text_encoder(1, dims());
        assert!(matches!(encode_text(&[], &p), Err(Error::Contract(_))));
    }

    #[test]
    fn unknown_index_is_vocab_error() {
        let p = init_text_encoder(1, dims());
        assert!(matches!(encode_text(&[99], &p), Err(Error::Vocab(_))));
    }

    #[test]
    fn over_long_sequence_rejected() {
        let p = init_text_encoder(1, dims());
        let toks = vec![1usize; 17];
        assert!(matches!(encode_text(&toks, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_text_encoder(9, dims());
        let b = init_text_encoder(9, dims());
        let c = init_text_encoder(10, dims());
        assert_eq!(a.embed.to_vec(), b.embed.to_vec());
        assert_eq!(a.fwd.w_h.to_vec(), b.fwd.w_h.to_vec());
        assert_ne!(a.embed.to_vec(), c.embed.to_vec());
        for (_, p) in a.named_params() {
            assert!(p.to_vec().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }

    #[test]
    fn reversal_swaps_cell_roles() {
        // encode(rev(x)) with swapped cells == encode(x) with columns
        // reversed and the two feature halves swapped.
        let p = init_text_encoder(5, dims());
        let swapped = TextEncoderParams {
            embed: p.embed.clone(),
            fwd: p.bwd.clone(),
            bwd: p.fwd.clone(),
            dims: p.dims,
        };
        let tokens = [2usize, 7, 4, 1];
        let reversed: Vec<usize> = tokens.iter().rev().copied().collect();
        let base = encode_text(&tokens, &p).unwrap();
        let other = encode_text(&reversed, &swapped).unwrap();

        let t = tokens.len();
        let h = p.dims.hidden;
        let d = p.dims.feature_dim();
        let bd = base.words.to_vec();
        let od = other.words.to_vec();
        for i in 0..t {
            for r in 0..d {
                // row r of column (t-1-i) in base, halves swapped
                let r_swapped = (r + h) % d;
                let lhs = od[r * t + i];
                let rhs = bd[r_swapped * t + (t - 1 - i)];
                assert!((lhs - rhs).abs() < 1e-12, "mismatch at word {i} row {r}");
            }
        }
    }

    #[test]
    fn gradients_reach_present_embedding_rows_only() {
        let p = init_text_encoder(3, dims());
        let out = encode_text(&[2, 5], &p).unwrap();
        out.words.sum().add(&out.sentence.sum()).backward().unwrap();
        let grad = p.embed.grad().expect("embedding grad populated");
        let e = p.dims.embed;
        let row_nonzero = |r: usize| grad[r * e..(r + 1) * e].iter().any(|&g| g != 0.0);
        assert!(row_nonzero(2));
        assert!(row_nonzero(5));
        for r in 0..12 {
            if r != 2 && r != 5 {
                assert!(!row_nonzero(r), "absent token row {r} has nonzero grad");
            }
        }
    }

    #[test]
    fn sentence_vector_ignores_padding_convention() {
        // The sentence vector is a function of the final states, so two
        // different-length encodings of the same prefix differ only via
        // the recurrence, not via any pad handling; T is taken as given.
        let p = init_text_encoder(3, dims());
        let a = encode_text(&[2, 5], &p).unwrap();
        assert_eq!(a.sentence.numel(), p.dims.feature_dim());
    }
}
