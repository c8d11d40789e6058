//! A configured model with its parameters, full-sequence evaluation and
//! incremental decoding.

use crate::attention::{self, KvCache};
use crate::autograd::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::extractors::{self, ExtractorCache};
use crate::nn::{self, Dropout, Mode};
use crate::params::{MixerParams, ParamSet, ParamTree};
use crate::rng::{PrngState, Stream};
use crate::tensor::{self, EwiseOp, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn new(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let expected = crate::params::ParamLayout::new(&config)?;
        if params.layout() != &expected {
            return Err(Error::Config("parameters do not match the model configuration".into()));
        }
        params.audit()?;
        Ok(Self { config, params })
    }

    /// Fresh parameters drawn from the init stream of `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamSet::init(&config, &mut PrngState::new(seed, Stream::Init))?;
        Ok(Self { config, params })
    }

    /// Put every parameter on `tape` as a constant.
    pub fn constants(&self, tape: &mut Tape) -> ParamTree<Var> {
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        self.params.layout().tree.map(|&i| vars[i])
    }

    /// Next-token distributions `[t, u]` for one sequence.
    pub fn forward(&self, tokens: &[usize], mode: Mode, rng: Option<&mut PrngState>) -> Result<Tensor> {
        self.forward_batch(tokens, tokens.len(), mode, rng)
    }

    /// Next-token distributions for sequences of length `seq_len` laid end to end.
    pub fn forward_batch(
        &self,
        tokens: &[usize],
        seq_len: usize,
        mode: Mode,
        rng: Option<&mut PrngState>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.constants(&mut tape);
        let mut drop = Dropout::new(mode, self.config.dropout, rng)?;
        let probs = nn::forward_tape(&mut tape, &self.config, &p, tokens, seq_len, &mut drop)?;
        Ok(tape.value(probs).clone())
    }

    pub fn decoder(&self) -> Decoder<'_> {
        Decoder::new(self)
    }
}

#[derive(Debug, Clone)]
enum MixerCache {
    Attention(KvCache),
    Extractor(ExtractorCache),
}

/// Position-by-position evaluation reusing per-layer caches.
pub struct Decoder<'a> {
    model: &'a Model,
    view: ParamTree<&'a Tensor>,
    caches: Vec<MixerCache>,
    len: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(model: &'a Model) -> Self {
        let cfg = &model.config;
        let caches = (0..cfg.layers)
            .map(|_| match cfg.sublayer {
                crate::config::SublayerKind::Attention => MixerCache::Attention(KvCache::new(cfg.heads, cfg.context_len)),
                _ => MixerCache::Extractor(ExtractorCache::new(cfg.context_len)),
            })
            .collect();
        Self {
            model,
            view: model.params.view(),
            caches,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feed the next token and return the distribution `[1, u]` over the one after it.
    pub fn step(&mut self, token: usize) -> Result<Tensor> {
        let cfg = &self.model.config;
        if self.len >= cfg.context_len {
            return Err(Error::ContextOverflow {
                len: self.len + 1,
                max: cfg.context_len,
            });
        }
        nn::check_tokens(&[token], 1, cfg)?;
        let p = &self.view;
        let eps = cfg.layernorm_eps;
        let mut x = nn::embed_rows(&[token], &[self.len], cfg, p)?;
        for (layer, cache) in p.layers.iter().zip(&mut self.caches) {
            let h = nn::layernorm(&x, layer.norm1.gain, layer.norm1.bias, eps)?;
            let s1 = match (cache, &layer.mixer) {
                (MixerCache::Attention(c), MixerParams::Attention(a)) => attention::mhsa_step(&h, c, a)?,
                (MixerCache::Extractor(c), m) => extractors::extractor_step(&h, c, m)?,
                _ => return Err(Error::Contract("cache does not match the sublayer".into())),
            };
            let r = tensor::ewise(EwiseOp::Add, &s1, &x)?;
            let x2 = nn::layernorm(&r, layer.norm2.gain, layer.norm2.bias, eps)?;
            let s2 = nn::ffn(&x2, &layer.ffn)?;
            x = tensor::ewise(EwiseOp::Add, &s2, &r)?;
        }
        let h = nn::layernorm(&x, p.final_norm.gain, p.final_norm.bias, eps)?;
        let logits = tensor::ewise(EwiseOp::Add, &tensor::matmul(&h, p.head_w)?, p.head_b)?;
        self.len += 1;
        tensor::softmax_rows(&logits, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SublayerKind;

    pub(crate) fn tiny(kind: SublayerKind) -> ModelConfig {
        ModelConfig {
            sublayer: kind,
            vocab_size: 7,
            context_len: 5,
            model_dim: 4,
            ffn_dim: 8,
            layers: 2,
            heads: 2,
            dropout: 0.1,
            layernorm_eps: 1e-5,
        }
    }

    /// Larger weights than the default initialiser so the test sees real mixing.
    fn scrambled(kind: SublayerKind, seed: u64) -> Model {
        let mut m = Model::init(tiny(kind), seed).unwrap();
        let mut rng = PrngState::new(seed, Stream::Sampling);
        for t in m.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.uniform() - 0.5);
        }
        m
    }

    #[test]
    fn rows_are_distributions() {
        for kind in SublayerKind::ALL {
            let m = scrambled(kind, 1);
            let y = m.forward(&[1, 2, 3, 4, 5], Mode::Eval, None).unwrap();
            for i in 0..5 {
                assert!(y.row(i).iter().all(|v| *v >= 0.0));
                assert!((y.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let mut cfg = tiny(SublayerKind::She);
        cfg.layers = 1;
        let mut m = Model::init(cfg, 1).unwrap();
        let names: Vec<String> = m.params.names().map(String::from).collect();
        for name in names {
            if !name.ends_with("gain") {
                m.params.get_mut(&name).unwrap().data_mut().fill(0.0);
            }
        }
        let y = m.forward(&[0, 3, 6], Mode::Eval, None).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn eval_is_deterministic() {
        let m = scrambled(SublayerKind::Attention, 2);
        let a = m.forward(&[1, 2, 3], Mode::Eval, None).unwrap();
        let b = m.forward(&[1, 2, 3], Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_mode_needs_a_stream() {
        let m = scrambled(SublayerKind::Me, 3);
        assert!(m.forward(&[1], Mode::Train, None).is_err());
        let mut rng = PrngState::new(1, Stream::Dropout);
        m.forward(&[1], Mode::Train, Some(&mut rng)).unwrap();
    }

    #[test]
    fn input_validation() {
        let m = scrambled(SublayerKind::We, 4);
        assert!(matches!(m.forward(&[7], Mode::Eval, None), Err(Error::Vocabulary { id: 7, size: 7 })));
        assert!(matches!(m.forward(&[1; 6], Mode::Eval, None), Err(Error::ContextOverflow { len: 6, max: 5 })));
    }

    #[test]
    fn decoder_matches_forward() {
        for kind in SublayerKind::ALL {
            let m = scrambled(kind, 5);
            let tokens = [3, 1, 4, 1, 5];
            let full = m.forward(&tokens, Mode::Eval, None).unwrap();
            let mut dec = m.decoder();
            for (i, &t) in tokens.iter().enumerate() {
                let row = dec.step(t).unwrap();
                let diff = row.data().iter().zip(full.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-12, "{kind} position {i}: {diff}");
            }
            assert!(matches!(dec.step(0), Err(Error::ContextOverflow { .. })));
        }
    }

    #[test]
    fn new_rejects_mismatched_params() {
        let m = Model::init(tiny(SublayerKind::He), 1).unwrap();
        assert!(Model::new(tiny(SublayerKind::We), m.params.clone()).is_err());
        Model::new(tiny(SublayerKind::He), m.params).unwrap();
    }
}
