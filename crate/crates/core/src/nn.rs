//! Embeddings, layer normalisation, feed-forward blocks and the full
//! pre-normalised stack, on the tape and as plain tensor functions.

use crate::attention;
use crate::autograd::{layernorm_rows, Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::extractors;
use crate::params::{FfnParams, MixerParams, ParamTree};
use crate::rng::PrngState;
use crate::tensor::{self, EwiseOp, Tensor};

/// Probability floor inside the logarithm of the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dropout settings for one forward pass. Dropout only happens in
/// [`Mode::Train`] with a positive probability.
pub struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut PrngState>,
}

impl<'a> Dropout<'a> {
    pub fn new(mode: Mode, p: f64, rng: Option<&'a mut PrngState>) -> Result<Self> {
        match mode {
            Mode::Eval => Ok(Self { p: 0.0, rng: None }),
            Mode::Train if p == 0.0 => Ok(Self { p, rng: None }),
            Mode::Train => {
                let rng = rng.ok_or_else(|| Error::Contract("training-mode dropout needs a random stream".into()))?;
                Ok(Self { p, rng: Some(rng) })
            }
        }
    }

    pub fn off() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) => tape.dropout(x, self.p, rng),
            None => Ok(x),
        }
    }
}

pub(crate) fn check_tokens(tokens: &[usize], seq_len: usize, cfg: &ModelConfig) -> Result<()> {
    if seq_len == 0 || tokens.len() % seq_len != 0 || tokens.is_empty() {
        return Err(Error::Contract(format!(
            "{} tokens do not split into sequences of length {seq_len}",
            tokens.len()
        )));
    }
    if seq_len > cfg.context_len {
        return Err(Error::ContextOverflow {
            len: seq_len,
            max: cfg.context_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Vocabulary {
            id: bad,
            size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// `dropout(sqrt(d) * tok_emb[s_i] + sqrt(d) * pos_emb[i])` for every row.
pub fn embed_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ParamTree<Var>,
    tokens: &[usize],
    seq_len: usize,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    check_tokens(tokens, seq_len, cfg)?;
    let scale = (cfg.model_dim as f64).sqrt();
    let positions: Vec<usize> = (0..tokens.len()).map(|i| i % seq_len).collect();
    let tok = tape.gather_rows(p.tok_emb, tokens, scale)?;
    let pos = tape.gather_rows(p.pos_emb, &positions, scale)?;
    let sum = tape.add(tok, pos)?;
    drop.apply(tape, sum)
}

pub fn ffn_tape(tape: &mut Tape, p: &FfnParams<Var>, x: Var) -> Result<Var> {
    let h = tape.matmul(x, p.w1)?;
    let h = tape.add(h, p.b1)?;
    let h = tape.relu(h)?;
    let y = tape.matmul(h, p.w2)?;
    tape.add(y, p.b2)
}

pub fn mixer_tape(tape: &mut Tape, cfg: &ModelConfig, p: &MixerParams<Var>, x: Var, seq_len: usize) -> Result<Var> {
    match p {
        MixerParams::Attention(a) => attention::mhsa_tape(tape, a, x, seq_len, cfg.heads),
        _ => extractors::extractor_tape(tape, p, x, seq_len),
    }
}

/// Next-token distributions `[B*t, u]` for `B` sequences of length `seq_len`
/// laid end to end in `tokens`.
pub fn forward_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ParamTree<Var>,
    tokens: &[usize],
    seq_len: usize,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let eps = cfg.layernorm_eps;
    let mut x = embed_tape(tape, cfg, p, tokens, seq_len, drop)?;
    for layer in &p.layers {
        let h = tape.layernorm(x, layer.norm1.gain, layer.norm1.bias, eps)?;
        let s1 = mixer_tape(tape, cfg, &layer.mixer, h, seq_len)?;
        // the same dropped-out sublayer output feeds both the second norm and the residual sum
        let d1 = drop.apply(tape, s1)?;
        let r = tape.add(d1, x)?;
        let x2 = tape.layernorm(r, layer.norm2.gain, layer.norm2.bias, eps)?;
        let s2 = ffn_tape(tape, &layer.ffn, x2)?;
        let d2 = drop.apply(tape, s2)?;
        x = tape.add(d2, r)?;
    }
    let h = tape.layernorm(x, p.final_norm.gain, p.final_norm.bias, eps)?;
    let logits = tape.matmul(h, p.head_w)?;
    let logits = tape.add(logits, p.head_b)?;
    tape.softmax_rows(logits)
}

/// Mean negative log-likelihood of `targets` under `probs`.
pub fn loss_tape(tape: &mut Tape, probs: Var, targets: &[usize]) -> Result<Var> {
    tape.nll(probs, targets, PROB_FLOOR)
}

/// Layer normalisation of every row of `x`.
pub fn layernorm(x: &Tensor, g: &Tensor, b: &Tensor, eps: f64) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    if d < 2 {
        return Err(Error::Contract(format!(
            "layer normalisation of a degenerate row of width {d}"
        )));
    }
    for p in [g, b] {
        if p.shape() != [1, d] {
            return Err(Error::Dimension {
                op: "layernorm",
                lhs: x.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let (out, _, _) = layernorm_rows(x.data(), d, g.data(), b.data(), eps);
    Tensor::new(x.shape().to_vec(), out)?.ensure_finite("layernorm")
}

/// `relu(x W1 + b1) W2 + b2`.
pub fn ffn(x: &Tensor, p: &FfnParams<&Tensor>) -> Result<Tensor> {
    let h = tensor::ewise(EwiseOp::Add, &tensor::matmul(x, p.w1)?, p.b1)?;
    let h = Tensor::new(h.shape().to_vec(), h.data().iter().map(|v| v.max(0.0)).collect())?;
    tensor::ewise(EwiseOp::Add, &tensor::matmul(&h, p.w2)?, p.b2)
}

/// Scaled token plus position embedding of one sequence, without dropout.
pub fn embed(tokens: &[usize], cfg: &ModelConfig, p: &ParamTree<&Tensor>) -> Result<Tensor> {
    check_tokens(tokens, tokens.len().max(1), cfg)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    embed_rows(tokens, &positions, cfg, p)
}

pub(crate) fn embed_rows(
    tokens: &[usize],
    positions: &[usize],
    cfg: &ModelConfig,
    p: &ParamTree<&Tensor>,
) -> Result<Tensor> {
    let d = cfg.model_dim;
    let scale = (d as f64).sqrt();
    let mut out = Vec::with_capacity(tokens.len() * d);
    for (&t, &i) in tokens.iter().zip(positions) {
        let tok = p.tok_emb.row(t);
        let pos = p.pos_emb.row(i);
        out.extend(tok.iter().zip(pos).map(|(a, b)| a * scale + b * scale));
    }
    Tensor::new(vec![tokens.len(), d], out)
}
