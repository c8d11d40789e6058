//! Autoregressive sampling with top-p, top-k and greedy selection.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Mode;
use crate::rng::{PrngState, Stream};
use crate::tensor::Tensor;
use crate::tokenizer::{Vocab, BOS_ID};

/// How far a distribution may stray from summing to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    TopP { p: f64 },
    TopK { k: usize },
    Greedy,
}

impl Strategy {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match *self {
            Strategy::TopP { p } if !(p > 0.0 && p <= 1.0) => Err(Error::Config(format!("top-p needs p in (0, 1], got {p}"))),
            Strategy::TopK { k } if k == 0 || k > vocab_size => {
                Err(Error::Config(format!("top-k needs 1 <= k <= {vocab_size}, got {k}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub strategy: Strategy,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn top_p(p: f64, seed: u64) -> Self {
        Self { strategy: Strategy::TopP { p }, seed }
    }

    pub fn top_k(k: usize, seed: u64) -> Self {
        Self { strategy: Strategy::TopK { k }, seed }
    }

    pub fn greedy() -> Self {
        Self { strategy: Strategy::Greedy, seed: 0 }
    }
}

fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Contract("empty distribution".into()));
    }
    if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Contract(format!("probability {bad} is not a finite non-negative number")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Contract(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Token ids by descending probability, smaller id first on ties.
fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ids
}

/// Smallest prefix of the ranked nonzero tokens whose mass reaches `p`.
pub fn nucleus(probs: &[f64], p: f64) -> Result<Vec<usize>> {
    check_distribution(probs)?;
    Strategy::TopP { p }.validate(probs.len())?;
    let mut out = Vec::new();
    let mut mass = 0.0;
    for id in ranked(probs) {
        if probs[id] == 0.0 {
            break;
        }
        out.push(id);
        mass += probs[id];
        if mass >= p {
            break;
        }
    }
    Ok(out)
}

/// The `k` most probable tokens.
pub fn top_k_set(probs: &[f64], k: usize) -> Result<Vec<usize>> {
    check_distribution(probs)?;
    Strategy::TopK { k }.validate(probs.len())?;
    let mut ids = ranked(probs);
    ids.truncate(k);
    Ok(ids)
}

/// Draw from `probs` restricted to `set` and renormalised.
fn draw(probs: &[f64], set: &[usize], rng: &mut PrngState) -> usize {
    let mass: f64 = set.iter().map(|&i| probs[i]).sum();
    let r = rng.uniform() * mass;
    let mut acc = 0.0;
    for &i in set {
        acc += probs[i];
        if r < acc {
            return i;
        }
    }
    *set.iter().rev().find(|&&i| probs[i] > 0.0).unwrap_or(&set[0])
}

pub fn top_p_sample(probs: &[f64], p: f64, rng: &mut PrngState) -> Result<usize> {
    Ok(draw(probs, &nucleus(probs, p)?, rng))
}

pub fn top_k_sample(probs: &[f64], k: usize, rng: &mut PrngState) -> Result<usize> {
    Ok(draw(probs, &top_k_set(probs, k)?, rng))
}

pub fn greedy(probs: &[f64]) -> Result<usize> {
    check_distribution(probs)?;
    Ok(ranked(probs)[0])
}

/// One draw under `strategy`, with the size of the candidate set.
pub fn sample(probs: &[f64], strategy: Strategy, rng: &mut PrngState) -> Result<(usize, usize)> {
    match strategy {
        Strategy::TopP { p } => {
            let set = nucleus(probs, p)?;
            Ok((draw(probs, &set, rng), set.len()))
        }
        Strategy::TopK { k } => {
            let set = top_k_set(probs, k)?;
            Ok((draw(probs, &set, rng), set.len()))
        }
        Strategy::Greedy => Ok((greedy(probs)?, 1)),
    }
}

/// Cached incremental decoding, or a full forward pass for every token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Cached,
    Recompute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub step: usize,
    pub token_id: usize,
    pub nucleus_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    /// Prompt ids followed by generated ids.
    pub ids: Vec<usize>,
    pub prompt_len: usize,
    pub steps: Vec<StepRecord>,
}

impl Generation {
    pub fn generated(&self) -> &[usize] {
        &self.ids[self.prompt_len..]
    }

    pub fn transcript_csv(&self) -> String {
        let mut s = String::from("step,token_id,nucleus_size\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{}", r.step, r.token_id, r.nucleus_size);
        }
        s
    }

    pub fn save_transcript(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.transcript_csv().as_bytes())
    }
}

fn last_row(probs: &Tensor) -> Vec<f64> {
    probs.row(probs.rows() - 1).to_vec()
}

/// Continue `prompt` by `n_tokens` sampled tokens. Once the sequence fills
/// the context window only the most recent `context_len` tokens are seen,
/// at positions restarting from the first.
pub fn generate(
    model: &Model,
    vocab: &Vocab,
    prompt: &str,
    n_tokens: usize,
    sampler: &SamplerSpec,
    mode: DecodeMode,
) -> Result<Generation> {
    let cfg = &model.config;
    if vocab.len() != cfg.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    sampler.strategy.validate(cfg.vocab_size)?;
    let mut ids = vocab.encode(prompt);
    if ids.is_empty() {
        ids.push(BOS_ID);
    }
    let prompt_len = ids.len();
    if n_tokens == 0 {
        return Ok(Generation {
            text: prompt.to_string(),
            ids,
            prompt_len,
            steps: Vec::new(),
        });
    }
    let l = cfg.context_len;
    let window = |ids: &[usize]| -> Result<Vec<f64>> {
        let start = ids.len().saturating_sub(l);
        Ok(last_row(&model.forward(&ids[start..], Mode::Eval, None)?))
    };

    let mut decoder = model.decoder();
    let mut probs = if mode == DecodeMode::Cached && prompt_len <= l {
        let mut last = Vec::new();
        for &t in &ids {
            last = decoder.step(t)?.into_data();
        }
        last
    } else {
        window(&ids)?
    };

    let mut rng = PrngState::new(sampler.seed, Stream::Sampling);
    let mut steps = Vec::with_capacity(n_tokens);
    for step in 1..=n_tokens {
        let (tok, size) = sample(&probs, sampler.strategy, &mut rng)?;
        ids.push(tok);
        steps.push(StepRecord {
            step,
            token_id: tok,
            nucleus_size: size,
        });
        if step == n_tokens {
            break;
        }
        probs = if mode == DecodeMode::Cached && ids.len() <= l {
            decoder.step(tok)?.into_data()
        } else {
            window(&ids)?
        };
    }
    let text = format!("{prompt}{}", vocab.decode_lossy(&ids[prompt_len..])?);
    Ok(Generation {
        text,
        ids,
        prompt_len,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, SublayerKind};

    #[test]
    fn nucleus_examples() {
        assert_eq!(nucleus(&[0.5, 0.3, 0.2], 0.6).unwrap(), vec![0, 1]);
        assert_eq!(nucleus(&[0.5, 0.3, 0.2], 1.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(nucleus(&[0.5, 0.3, 0.2], 0.5).unwrap(), vec![0]);
        assert_eq!(nucleus(&[0.25, 0.5, 0.25, 0.0], 1.0).unwrap(), vec![1, 0, 2]);
        assert!(matches!(nucleus(&[0.5, 0.3], 0.6), Err(Error::Contract(_))));
        assert!(matches!(nucleus(&[0.5, 0.5], 0.0), Err(Error::Config(_))));
        assert!(matches!(nucleus(&[0.5, 0.5], 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_set(&[0.2, 0.5, 0.3], 2).unwrap(), vec![1, 2]);
        assert_eq!(top_k_set(&[0.5, 0.25, 0.25], 2).unwrap(), vec![0, 1]);
        assert!(matches!(top_k_set(&[0.5, 0.5], 3), Err(Error::Config(_))));
        assert!(matches!(top_k_set(&[0.5, 0.5], 0), Err(Error::Config(_))));
        let mut rng = PrngState::new(1, Stream::Sampling);
        for _ in 0..100 {
            assert_eq!(top_k_sample(&[0.2, 0.5, 0.3], 1, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn greedy_prefers_smaller_id_on_ties() {
        assert_eq!(greedy(&[0.4, 0.4, 0.2]).unwrap(), 0);
        assert_eq!(greedy(&[0.1, 0.2, 0.7]).unwrap(), 2);
    }

    fn tiny() -> (Model, Vocab) {
        let cfg = ModelConfig {
            sublayer: SublayerKind::She,
            vocab_size: 257,
            context_len: 6,
            model_dim: 4,
            ffn_dim: 8,
            layers: 1,
            heads: 1,
            dropout: 0.0,
            layernorm_eps: 1e-5,
        };
        let mut m = Model::init(cfg, 3).unwrap();
        let mut rng = PrngState::new(9, Stream::Init);
        for t in m.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.normal(1.0));
        }
        (m, Vocab::base())
    }

    #[test]
    fn zero_tokens_returns_prompt() {
        let (m, v) = tiny();
        let g = generate(&m, &v, "hey there", 0, &SamplerSpec::greedy(), DecodeMode::Cached).unwrap();
        assert_eq!(g.text, "hey there");
        assert!(g.steps.is_empty());
    }

    #[test]
    fn cached_matches_recompute_past_the_window() {
        let (m, v) = tiny();
        for spec in [SamplerSpec::greedy(), SamplerSpec::top_p(0.9, 4), SamplerSpec::top_k(5, 4)] {
            let a = generate(&m, &v, "ab", 10, &spec, DecodeMode::Cached).unwrap();
            let b = generate(&m, &v, "ab", 10, &spec, DecodeMode::Recompute).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.ids.len(), 12);
        }
    }

    #[test]
    fn empty_prompt_starts_from_bos() {
        let (m, v) = tiny();
        let g = generate(&m, &v, "", 3, &SamplerSpec::top_p(0.6, 1), DecodeMode::Cached).unwrap();
        assert_eq!(g.ids[0], BOS_ID);
        assert_eq!(g.prompt_len, 1);
        assert_eq!(g.transcript_csv().lines().count(), 4);
    }

    #[test]
    fn long_prompt_is_truncated() {
        let (m, v) = tiny();
        let g = generate(&m, &v, "a long prompt", 2, &SamplerSpec::greedy(), DecodeMode::Cached).unwrap();
        assert_eq!(g.generated().len(), 2);
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let (m, _) = tiny();
        let v = Vocab::train(&["aa aa aa"], 258).unwrap();
        assert!(matches!(
            generate(&m, &v, "a", 1, &SamplerSpec::greedy(), DecodeMode::Cached),
            Err(Error::Config(_))
        ));
    }
}
