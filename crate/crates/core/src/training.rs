//! Loss, AdamW, the seeded batch schedule and the training loop.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Tape;
use crate::config::ModelConfig;
use crate::corpus::Windows;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{self, Dropout, Mode, PROB_FLOOR};
use crate::params::ParamSet;
use crate::rng::{PrngState, Stream};
use crate::tensor::Tensor;

fn default_weight_decay() -> f64 {
    0.01
}

fn default_adam_eps() -> f64 {
    1e-8
}

/// Optimiser and schedule settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub num_batches: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            num_batches: 60_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: default_weight_decay(),
            adam_eps: default_adam_eps(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        Ok(())
    }
}

/// Mean over rows of `-ln(max(probs[i, target_i], PROB_FLOOR))`.
pub fn loss(probs: &Tensor, targets: &[usize]) -> Result<f64> {
    let (rows, u) = probs.dims2()?;
    if rows != targets.len() || rows == 0 {
        return Err(Error::Dimension {
            op: "loss",
            lhs: probs.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= u {
            return Err(Error::Vocabulary { id: t, size: u });
        }
        total -= probs.data()[i * u + t].max(PROB_FLOOR).ln();
    }
    Ok(total / rows as f64)
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.tensors().len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.tensors().len()
            )));
        }
        for ((name, t), g) in params.names().zip(params.tensors()).zip(grads) {
            if g.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "adamw",
                    lhs: t.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of `{name}` is not finite")));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for (((theta, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= self.learning_rate * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *x);
            }
        }
        Ok(())
    }
}

/// Window order for every batch of a run. Depends only on the seed, the
/// window count and the batch size: each epoch is a fresh permutation drawn
/// from the batch-order stream; the tail that does not fill a batch is dropped.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    rng: PrngState,
    windows: usize,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSchedule {
    pub fn new(seed: u64, windows: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || windows < batch_size {
            return Err(Error::Data(format!(
                "{windows} windows cannot fill a batch of {batch_size}"
            )));
        }
        Ok(Self {
            rng: PrngState::new(seed, Stream::BatchOrder),
            windows,
            batch_size,
            order: Vec::new(),
            cursor: usize::MAX,
        })
    }

    /// Window indices of the next batch.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let per_epoch = self.windows / self.batch_size;
        if self.cursor >= per_epoch * self.batch_size {
            self.order = (0..self.windows).collect();
            for i in (1..self.windows).rev() {
                let j = self.rng.below(i + 1);
                self.order.swap(i, j);
            }
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}

/// First 64 bits (hex) of the SHA-256 of the batch's token ids as little-endian u32.
pub fn batch_hash(ids: &[usize]) -> String {
    let mut h = Sha256::new();
    for &id in ids {
        h.update((id as u32).to_le_bytes());
    }
    crate::corpus::hex(&h.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostLog {
    entries: Vec<(usize, f64)>,
}

impl CostLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, batch: usize, cost: f64) -> Result<()> {
        if !cost.is_finite() {
            return Err(Error::Numeric(format!("cost of batch {batch} is not finite")));
        }
        if let Some(&(last, _)) = self.entries.last() {
            if batch <= last {
                return Err(Error::Contract(format!("batch {batch} logged after {last}")));
            }
        }
        self.entries.push((batch, cost));
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn costs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("batch,cost\n");
        for (b, c) in &self.entries {
            let _ = writeln!(s, "{b},{c:.16e}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("batch,cost") {
            return Err(Error::Parse("cost log must start with `batch,cost`".into()));
        }
        let mut log = Self::new();
        for line in lines {
            let (b, c) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad cost log row `{line}`")))?;
            let b = b.parse().map_err(|_| Error::Parse(format!("bad batch index `{b}`")))?;
            let c = c.parse().map_err(|_| Error::Parse(format!("bad cost `{c}`")))?;
            log.push(b, c)?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Median of each complete, non-overlapping window of `window` costs.
pub fn median_window(costs: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("median window must be positive".into()));
    }
    Ok(costs.chunks_exact(window).map(median).collect())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Inputs and targets of a set of windows, laid end to end.
pub fn assemble_batch(windows: &Windows<'_>, picks: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let l = windows.context_len();
    let mut inputs = Vec::with_capacity(picks.len() * l);
    let mut targets = Vec::with_capacity(picks.len() * l);
    for &w in picks {
        let win = windows.get(w);
        inputs.extend_from_slice(&win[..l]);
        targets.extend_from_slice(&win[1..]);
    }
    (inputs, targets)
}

/// Cost and per-parameter gradients of one batch.
pub fn cost_and_grads(
    model: &Model,
    inputs: &[usize],
    targets: &[usize],
    seq_len: usize,
    mode: Mode,
    rng: Option<&mut PrngState>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<_> = model.params.tensors().iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let p = model.params.layout().tree.map(|&i| vars[i]);
    let mut drop = Dropout::new(mode, model.config.dropout, rng)?;
    let probs = nn::forward_tape(&mut tape, &model.config, &p, inputs, seq_len, &mut drop)?;
    let loss = nn::loss_tape(&mut tape, probs, targets)?;
    let cost = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| grads.take(v).expect("every parameter leaf receives a gradient"))
        .collect();
    Ok((cost, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub batch: usize,
    pub cost: f64,
    pub hash: String,
}

/// A model, its optimiser and its batch and dropout streams.
pub struct Trainer<'a> {
    pub model: Model,
    opt: AdamW,
    schedule: BatchSchedule,
    dropout: PrngState,
    windows: Windows<'a>,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// Fresh model initialised from `train.seed`.
    pub fn new(model_cfg: ModelConfig, train: &TrainConfig, stream: &'a [usize]) -> Result<Self> {
        model_cfg.validate()?;
        train.validate()?;
        let model = Model::init(model_cfg, train.seed)?;
        Self::with_model(model, train, stream)
    }

    pub fn with_model(model: Model, train: &TrainConfig, stream: &'a [usize]) -> Result<Self> {
        train.validate()?;
        if let Some(&bad) = stream.iter().find(|&&t| t >= model.config.vocab_size) {
            return Err(Error::Vocabulary {
                id: bad,
                size: model.config.vocab_size,
            });
        }
        let windows = Windows::new(stream, model.config.context_len)?;
        let schedule = BatchSchedule::new(train.seed, windows.count(), train.batch_size)?;
        Ok(Self {
            opt: AdamW::new(&model.params, train),
            schedule,
            dropout: PrngState::new(train.seed, Stream::Dropout),
            windows,
            model,
            step: 0,
        })
    }

    /// Train on the next batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let picks = self.schedule.next_batch();
        let (inputs, targets) = assemble_batch(&self.windows, &picks);
        let ids: Vec<usize> = picks.iter().flat_map(|&w| self.windows.get(w).iter().copied()).collect();
        let hash = batch_hash(&ids);
        let (cost, grads) = cost_and_grads(
            &self.model,
            &inputs,
            &targets,
            self.windows.context_len(),
            Mode::Train,
            Some(&mut self.dropout),
        )?;
        if !cost.is_finite() {
            return Err(Error::Numeric(format!("cost of batch {} is not finite", self.step + 1)));
        }
        self.opt.step(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(StepReport {
            batch: self.step,
            cost,
            hash,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: CostLog,
    pub hashes: Vec<String>,
}

/// Run `train.num_batches` steps, calling `observe` after each.
pub fn train(
    model_cfg: ModelConfig,
    train: &TrainConfig,
    stream: &[usize],
    mut observe: impl FnMut(&StepReport),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model_cfg, train, stream)?;
    let mut log = CostLog::new();
    let mut hashes = Vec::with_capacity(train.num_batches);
    for _ in 0..train.num_batches {
        let r = trainer.step()?;
        log.push(r.batch, r.cost)?;
        observe(&r);
        hashes.push(r.hash);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log,
        hashes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SublayerKind;

    #[test]
    fn loss_examples() {
        let uniform = Tensor::filled(&[3, 4], 0.25);
        assert!((loss(&uniform, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let onehot = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(loss(&onehot, &[1, 0]).unwrap(), 0.0);
        assert!(matches!(loss(&uniform, &[0, 1, 4]), Err(Error::Vocabulary { .. })));
        let floor = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!((loss(&floor, &[0]).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_direct_sum() {
        let mut rng = PrngState::new(1, Stream::Init);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let r: Vec<f64> = (0..6).map(|_| rng.uniform() + 0.01).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let targets = [0, 5, 2, 2, 3];
        let want = -targets.iter().enumerate().map(|(i, &t)| rows[i][t].ln()).sum::<f64>() / 5.0;
        let got = loss(&Tensor::from_rows(&rows).unwrap(), &targets).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    fn toy_params() -> ParamSet {
        let cfg = ModelConfig {
            sublayer: SublayerKind::Me,
            vocab_size: 2,
            context_len: 1,
            model_dim: 2,
            ffn_dim: 1,
            layers: 1,
            heads: 1,
            dropout: 0.0,
            layernorm_eps: 1e-5,
        };
        ParamSet::init(&cfg, &mut PrngState::new(3, Stream::Init)).unwrap()
    }

    #[test]
    fn zero_gradients_without_decay_change_nothing() {
        let mut p = toy_params();
        let before = p.clone();
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        let mut opt = AdamW::new(&p, &cfg);
        let grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        opt.step(&mut p, &grads).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_by_hand() {
        let mut p = toy_params();
        let cfg = TrainConfig { learning_rate: 0.1, weight_decay: 0.5, ..TrainConfig::default() };
        let mut opt = AdamW::new(&p, &cfg);
        let theta0 = p.tensors()[0].data()[0];
        let mut grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        grads[0].data_mut()[0] = 2.0;
        opt.step(&mut p, &grads).unwrap();
        // m_hat = 2, v_hat = 4 after bias correction
        let want = theta0 - 0.1 * (2.0 / (2.0 + 1e-8) + 0.5 * theta0);
        assert!((p.tensors()[0].data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn matches_plain_adam_without_decay() {
        // minimise (x - 3)^2 from x = 0
        let mut p = toy_params();
        p.tensors_mut()[0].data_mut()[0] = 0.0;
        let cfg = TrainConfig { learning_rate: 0.05, weight_decay: 0.0, ..TrainConfig::default() };
        let mut opt = AdamW::new(&p, &cfg);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = 2.0 * (p.tensors()[0].data()[0] - 3.0);
            let mut grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            grads[0].data_mut()[0] = g;
            opt.step(&mut p, &grads).unwrap();

            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((p.tensors()[0].data()[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = toy_params();
        let mut opt = AdamW::new(&p, &TrainConfig::default());
        let mut grads: Vec<Tensor> = p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        grads[1].data_mut()[0] = f64::NAN;
        let err = opt.step(&mut p, &grads).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("pos_emb")), "{err}");
    }

    #[test]
    fn median_window_examples() {
        assert_eq!(median_window(&[3.0, 1.0, 2.0], 3).unwrap(), vec![2.0]);
        assert_eq!(median_window(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.5, 3.5]);
        assert!(median_window(&[], 5).unwrap().is_empty());
        assert_eq!(median_window(&[1.0, 2.0, 3.0], 2).unwrap(), vec![1.5]);
        assert!(median_window(&[1.0], 0).is_err());
    }

    #[test]
    fn schedule_is_a_per_epoch_permutation() {
        let mut s = BatchSchedule::new(4, 10, 3).unwrap();
        let mut epoch: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        epoch.sort();
        epoch.dedup();
        assert_eq!(epoch.len(), 9);
        let next: Vec<usize> = s.next_batch();
        assert_eq!(next.len(), 3);
        let mut again = BatchSchedule::new(4, 10, 3).unwrap();
        let a: Vec<Vec<usize>> = (0..5).map(|_| again.next_batch()).collect();
        let mut s2 = BatchSchedule::new(4, 10, 3).unwrap();
        let b: Vec<Vec<usize>> = (0..5).map(|_| s2.next_batch()).collect();
        assert_eq!(a, b);
        assert!(BatchSchedule::new(1, 2, 3).is_err());
    }

    #[test]
    fn cost_log_csv_round_trip() {
        let mut log = CostLog::new();
        log.push(1, 8.5).unwrap();
        log.push(2, 0.1 + 0.2).unwrap();
        assert!(log.push(2, 1.0).is_err());
        assert!(log.push(3, f64::NAN).is_err());
        let csv = log.to_csv();
        assert!(csv.starts_with("batch,cost\n1,8.5000000000000000e0\n"));
        assert_eq!(CostLog::from_csv(&csv).unwrap(), log);
    }

    #[test]
    fn batch_hash_is_stable() {
        assert_eq!(batch_hash(&[1, 2, 3]), batch_hash(&[1, 2, 3]));
        assert_ne!(batch_hash(&[1, 2, 3]), batch_hash(&[1, 3, 2]));
        assert_eq!(batch_hash(&[]).len(), 16);
    }
}
