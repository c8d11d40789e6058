//! Operation and parameter counts of the token-mixing sublayers, a literal
//! loop evaluator that counts them independently, and critical paths.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::config::{ModelConfig, SublayerKind};
use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// A whole sequence of `l` positions.
    Training,
    /// The incremental work for the token at position `t`.
    Inference,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Training, Phase::Inference];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Inference => "inference",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OpCounts {
    pub mults: u64,
    pub adds: u64,
    pub divs: u64,
    pub exps: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.mults + self.adds + self.divs + self.exps
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            mults: self.mults + o.mults,
            adds: self.adds + o.adds,
            divs: self.divs + o.divs,
            exps: self.exps + o.exps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCountReport {
    pub kind: SublayerKind,
    pub phase: Phase,
    pub d: u64,
    /// `l` in training, `t` in inference.
    pub l: u64,
    pub n: u64,
    pub counts: OpCounts,
    pub params: u64,
}

impl OpCountReport {
    pub const CSV_HEADER: &'static str = "kind,phase,d,l,n,mults,adds,divs,exps,params";

    pub fn csv_row(&self) -> String {
        let c = &self.counts;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.kind, self.phase, self.d, self.l, self.n, c.mults, c.adds, c.divs, c.exps, self.params
        )
    }
}

fn check_args(kind: SublayerKind, d: u64, l: u64, n: u64) -> Result<()> {
    if d == 0 || l == 0 || n == 0 {
        return Err(Error::Config(format!("d, l and n must be positive (got d={d}, l={l}, n={n})")));
    }
    if kind == SublayerKind::Attention && d % n != 0 {
        return Err(Error::Config(format!("{n} heads do not divide d={d}")));
    }
    Ok(())
}

fn exact(v: i128) -> u64 {
    u64::try_from(v).expect("operation counts are non-negative and fit in 64 bits")
}

fn halve(v: i128) -> u64 {
    assert!(v % 2 == 0, "closed form is integral");
    exact(v / 2)
}

/// Closed-form trainable parameter count of one sublayer.
pub fn analytic_params(kind: SublayerKind, d: u64, l: u64) -> u64 {
    let (d, l) = (d as i128, l as i128);
    exact(match kind {
        SublayerKind::Attention => 4 * d * d,
        SublayerKind::She => l * d * d + 2 * d * d,
        SublayerKind::He => l * d + 3 * d * d,
        SublayerKind::We => l * d + 2 * d * d,
        SublayerKind::Me => l,
    })
}

/// Closed-form counts. `l_or_t` is the sequence length in training and the
/// position of the new token in inference; it also sets the parameter count.
pub fn analytic_counts(kind: SublayerKind, phase: Phase, d: u64, l_or_t: u64, n: u64) -> Result<OpCountReport> {
    check_args(kind, d, l_or_t, n)?;
    let (di, x, ni) = (d as i128, l_or_t as i128, n as i128);
    let counts = match phase {
        Phase::Training => {
            let l = x;
            let d = di;
            match kind {
                SublayerKind::Attention => OpCounts {
                    mults: exact(l * l * d + 4 * l * d * d + l * d),
                    adds: exact(l * l * d + 4 * l * d * d - 4 * l * d - l * ni),
                    divs: exact(ni * l * l + ni * l),
                    exps: halve(ni * l * l + ni * l),
                },
                SublayerKind::She => OpCounts {
                    mults: halve(l * l * d * d + 5 * l * d * d + 2 * l * d),
                    adds: halve(l * l * d * d + 5 * l * d * d - 6 * l * d),
                    ..OpCounts::default()
                },
                SublayerKind::He => OpCounts {
                    mults: halve(l * l * d + 3 * l * d + 6 * l * d * d),
                    adds: halve(6 * l * d * d + l * l * d - 7 * l * d),
                    ..OpCounts::default()
                },
                SublayerKind::We => OpCounts {
                    mults: halve(l * l * d + 3 * l * d + 4 * l * d * d),
                    adds: halve(4 * l * d * d + l * l * d - 5 * l * d),
                    ..OpCounts::default()
                },
                SublayerKind::Me => OpCounts {
                    mults: halve(l * l * d + l * d),
                    adds: halve(l * l * d - l * d),
                    ..OpCounts::default()
                },
            }
        }
        Phase::Inference => {
            let t = x;
            let d = di;
            match kind {
                SublayerKind::Attention => OpCounts {
                    mults: exact(2 * t * d + 4 * d * d),
                    adds: exact(2 * t * d + 4 * d * d - 5 * d - ni),
                    divs: exact(2 * t * ni),
                    exps: exact(t * ni),
                },
                SublayerKind::She => OpCounts {
                    mults: exact(t * d * d + 2 * d * d + d),
                    adds: exact(t * d * d + 2 * d * d - 3 * d),
                    ..OpCounts::default()
                },
                SublayerKind::He => OpCounts {
                    mults: exact(t * d + 3 * d * d + d),
                    adds: exact(t * d + 3 * d * d - 4 * d),
                    ..OpCounts::default()
                },
                SublayerKind::We => OpCounts {
                    mults: exact(t * d + 2 * d * d + d),
                    adds: exact(t * d + 2 * d * d - 3 * d),
                    ..OpCounts::default()
                },
                SublayerKind::Me => OpCounts {
                    mults: exact(t * d),
                    adds: exact(t * d - d),
                    ..OpCounts::default()
                },
            }
        }
    };
    Ok(OpCountReport {
        kind,
        phase,
        d,
        l: l_or_t,
        n,
        counts,
        params: analytic_params(kind, d, l_or_t),
    })
}

/// Scalar arithmetic that tallies every operation it performs.
#[derive(Debug, Default)]
struct Counter {
    ops: OpCounts,
}

impl Counter {
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.ops.mults += 1;
        a * b
    }

    fn add(&mut self, a: f64, b: f64) -> f64 {
        self.ops.adds += 1;
        a + b
    }

    fn div(&mut self, a: f64, b: f64) -> f64 {
        self.ops.divs += 1;
        a / b
    }

    fn exp(&mut self, a: f64) -> f64 {
        self.ops.exps += 1;
        a.exp()
    }

    fn sum(&mut self, xs: &[f64]) -> f64 {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    fn dot(&mut self, a: &[f64], b: &[f64]) -> f64 {
        let prods: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        self.sum(&prods)
    }

    /// Row vector times a `rows x cols` matrix.
    fn vecmat(&mut self, x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
        (0..w[0].len())
            .map(|j| {
                let col: Vec<f64> = w.iter().map(|r| r[j]).collect();
                self.dot(x, &col)
            })
            .collect()
    }

    fn hadamard(&mut self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect()
    }

    fn scale(&mut self, s: f64, a: &[f64]) -> Vec<f64> {
        a.iter().map(|&x| self.mul(s, x)).collect()
    }

    /// Element-wise sum of equally long vectors.
    fn accumulate(&mut self, vs: &[Vec<f64>]) -> Vec<f64> {
        (0..vs[0].len())
            .map(|j| {
                let col: Vec<f64> = vs.iter().map(|v| v[j]).collect();
                self.sum(&col)
            })
            .collect()
    }
}

/// Small deterministic values for the evaluator's inputs and weights.
fn value(seed: usize) -> f64 {
    ((seed.wrapping_mul(2_654_435_761) >> 7) % 1000) as f64 / 1000.0 - 0.5
}

fn matrix(rows: usize, cols: usize, salt: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|i| (0..cols).map(|j| value(salt * 7919 + i * cols + j)).collect())
        .collect()
}

/// Per-position state of the literal evaluator for one sublayer.
struct Literal {
    kind: SublayerKind,
    d: usize,
    heads: usize,
    inputs: Vec<Vec<f64>>,
    // attention: per head query, key, value; extractors: per lag weights
    wq: Vec<Vec<Vec<f64>>>,
    wk: Vec<Vec<Vec<f64>>>,
    wv: Vec<Vec<Vec<f64>>>,
    wo: Vec<Vec<f64>>,
    lag_mats: Vec<Vec<Vec<f64>>>,
    lag_vecs: Vec<Vec<f64>>,
    lag_scalars: Vec<f64>,
    w_in: Vec<Vec<f64>>,
    w_adj: Vec<Vec<f64>>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    transformed: Vec<Vec<f64>>,
}

impl Literal {
    fn new(kind: SublayerKind, d: usize, l: usize, heads: usize) -> Self {
        let h = d / heads;
        Self {
            kind,
            d,
            heads,
            inputs: matrix(l, d, 1),
            wq: (0..heads).map(|j| matrix(d, h, 10 + j)).collect(),
            wk: (0..heads).map(|j| matrix(d, h, 100 + j)).collect(),
            wv: (0..heads).map(|j| matrix(d, h, 1000 + j)).collect(),
            wo: matrix(d, d, 2),
            lag_mats: (0..l).map(|k| matrix(d, d, 3000 + k)).collect(),
            lag_vecs: matrix(l, d, 4),
            lag_scalars: (0..l).map(|k| value(5000 + k)).collect(),
            w_in: matrix(d, d, 6),
            w_adj: matrix(d, d, 7),
            keys: vec![Vec::new(); heads],
            values: vec![Vec::new(); heads],
            transformed: Vec::new(),
        }
    }

    /// Output for position `t` (0-based), given that every earlier position was processed.
    fn step(&mut self, c: &mut Counter, t: usize) -> Vec<f64> {
        let x = self.inputs[t].clone();
        match self.kind {
            SublayerKind::Attention => {
                let h = self.d / self.heads;
                let root = (h as f64).sqrt();
                let mut concat = Vec::with_capacity(self.d);
                for j in 0..self.heads {
                    let q = c.vecmat(&x, &self.wq[j]);
                    let k = c.vecmat(&x, &self.wk[j]);
                    let v = c.vecmat(&x, &self.wv[j]);
                    self.keys[j].push(k);
                    self.values[j].push(v);
                    let exps: Vec<f64> = self.keys[j]
                        .iter()
                        .map(|kc| {
                            let s = c.dot(&q, kc);
                            let s = c.div(s, root);
                            c.exp(s)
                        })
                        .collect();
                    let total = c.sum(&exps);
                    let probs: Vec<f64> = exps.iter().map(|&e| c.div(e, total)).collect();
                    let weighted: Vec<Vec<f64>> =
                        probs.iter().zip(&self.values[j]).map(|(&p, v)| c.scale(p, v)).collect();
                    concat.extend(c.accumulate(&weighted));
                }
                c.vecmat(&concat, &self.wo)
            }
            SublayerKind::She => {
                let terms: Vec<Vec<f64>> = (0..=t).map(|k| c.vecmat(&self.inputs[t - k], &self.lag_mats[k])).collect();
                let e = c.accumulate(&terms);
                let a = c.vecmat(&x, &self.w_adj);
                let g = c.hadamard(&e, &a);
                c.vecmat(&g, &self.wo)
            }
            SublayerKind::He => {
                let z = c.vecmat(&x, &self.w_in);
                self.transformed.push(z);
                let terms: Vec<Vec<f64>> =
                    (0..=t).map(|k| c.hadamard(&self.lag_vecs[k], &self.transformed[t - k])).collect();
                let e = c.accumulate(&terms);
                let a = c.vecmat(&x, &self.w_adj);
                let g = c.hadamard(&e, &a);
                c.vecmat(&g, &self.wo)
            }
            SublayerKind::We => {
                let terms: Vec<Vec<f64>> = (0..=t).map(|k| c.hadamard(&self.lag_vecs[k], &self.inputs[t - k])).collect();
                let e = c.accumulate(&terms);
                let a = c.vecmat(&x, &self.w_adj);
                let g = c.hadamard(&e, &a);
                c.vecmat(&g, &self.wo)
            }
            SublayerKind::Me => {
                let terms: Vec<Vec<f64>> = (0..=t).map(|k| c.scale(self.lag_scalars[k], &self.inputs[t - k])).collect();
                c.accumulate(&terms)
            }
        }
    }
}

/// Parameter count of one sublayer from the tensors a model of that shape allocates.
pub fn constructed_params(kind: SublayerKind, d: u64, l: u64, n: u64) -> Result<u64> {
    let cfg = ModelConfig {
        sublayer: kind,
        vocab_size: 2,
        context_len: l as usize,
        model_dim: d as usize,
        ffn_dim: 1,
        layers: 1,
        heads: n as usize,
        dropout: 0.0,
        layernorm_eps: 1e-5,
    };
    Ok(ParamSet::zeros(&cfg)?.mixer_params(0) as u64)
}

/// Counts obtained by running the sublayer's equations as scalar loops over
/// causal positions. Practical only for small arguments.
pub fn measured_counts(kind: SublayerKind, phase: Phase, d: u64, l_or_t: u64, n: u64) -> Result<OpCountReport> {
    check_args(kind, d, l_or_t, n)?;
    let heads = if kind == SublayerKind::Attention { n as usize } else { 1 };
    let len = l_or_t as usize;
    let mut lit = Literal::new(kind, d as usize, len, heads);
    let mut c = Counter::default();
    let counts = match phase {
        Phase::Training => {
            for t in 0..len {
                lit.step(&mut c, t);
            }
            c.ops
        }
        Phase::Inference => {
            for t in 0..len - 1 {
                lit.step(&mut c, t);
            }
            let before = c.ops;
            lit.step(&mut c, len - 1);
            OpCounts {
                mults: c.ops.mults - before.mults,
                adds: c.ops.adds - before.adds,
                divs: c.ops.divs - before.divs,
                exps: c.ops.exps - before.exps,
            }
        }
    };
    Ok(OpCountReport {
        kind,
        phase,
        d,
        l: l_or_t,
        n,
        counts,
        params: constructed_params(kind, d, l_or_t, heads as u64)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Multiplication,
    Cumulation,
    Division,
    Exponentiation,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Multiplication => "multiplication",
            Stage::Cumulation => "cumulation",
            Stage::Division => "division",
            Stage::Exponentiation => "exponentiation",
        }
    }
}

/// Longest chain of dependent arithmetic stages for one new token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CriticalPath {
    pub kind: SublayerKind,
    pub stages: Vec<Stage>,
    /// Worked out here from the sublayer's dataflow rather than quoted.
    pub derived: bool,
}

impl CriticalPath {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

impl fmt::Display for CriticalPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.stages.iter().map(|s| s.name()).collect();
        f.write_str(&names.join(" - "))
    }
}

/// Inference-phase critical path of `kind`.
pub fn critical_path(kind: SublayerKind) -> CriticalPath {
    use Stage::{Cumulation as C, Division as D, Exponentiation as E, Multiplication as M};
    let (stages, derived) = match kind {
        // projection, score, scale, exp, normalise, weighted values, output
        SublayerKind::Attention => (vec![M, C, M, C, D, E, C, D, M, C, M, C], false),
        SublayerKind::She => (vec![M, C, M, M, C], false),
        // the input transform precedes the lag-weighted sum
        SublayerKind::He => (vec![M, C, M, C, M, M, C], true),
        SublayerKind::We => (vec![M, C, M, M, C], true),
        SublayerKind::Me => (vec![M, C], false),
    };
    CriticalPath { kind, stages, derived }
}

/// The six sublayers compared at model dimension `d` and context `l`.
pub fn table7(d: u64, l: u64) -> Result<Vec<(String, OpCountReport)>> {
    let mut cols = vec![
        ("1-head attention".to_string(), analytic_counts(SublayerKind::Attention, Phase::Training, d, l, 1)?),
    ];
    if d % 32 == 0 {
        cols.push(("32-head attention".into(), analytic_counts(SublayerKind::Attention, Phase::Training, d, l, 32)?));
    }
    for kind in [SublayerKind::She, SublayerKind::He, SublayerKind::We, SublayerKind::Me] {
        cols.push((kind.name().to_uppercase(), analytic_counts(kind, Phase::Training, d, l, 1)?));
    }
    Ok(cols)
}

/// `1234567` as `1,234,567`.
pub fn group_digits(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Aligned text table of training-phase counts and parameters.
pub fn table7_text(d: u64, l: u64) -> Result<String> {
    let cols = table7(d, l)?;
    let rows: [(&str, fn(&OpCountReport) -> u64); 6] = [
        ("Multiplications", |r| r.counts.mults),
        ("Additions", |r| r.counts.adds),
        ("Divisions", |r| r.counts.divs),
        ("Exponentiations", |r| r.counts.exps),
        ("Parameters", |r| r.params),
        ("Total arithmetic", |r| r.counts.total()),
    ];
    let mut cells: Vec<Vec<String>> = vec![std::iter::once(String::new()).chain(cols.iter().map(|c| c.0.clone())).collect()];
    for (label, get) in rows {
        cells.push(
            std::iter::once(label.to_string())
                .chain(cols.iter().map(|c| group_digits(get(&c.1))))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..cells[0].len()).map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let mut out = format!("training, d={d}, l={l}\n");
    for row in &cells {
        let mut line = format!("{:<w$}", row[0], w = widths[0]);
        for (cell, w) in row[1..].iter().zip(&widths[1..]) {
            let _ = write!(line, "  {cell:>w$}");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out)
}

fn divisors(d: u64) -> Vec<u64> {
    (1..=d).filter(|n| d % n == 0).collect()
}

/// Every (kind, phase, d, l, n) combination of a grid; `n` runs over the
/// divisors of `d` for attention and is 1 otherwise.
pub fn grid(ds: &[u64], ls: &[u64]) -> Vec<(SublayerKind, Phase, u64, u64, u64)> {
    let mut out = Vec::new();
    for kind in SublayerKind::ALL {
        for phase in Phase::ALL {
            for &d in ds {
                for &l in ls {
                    let ns = if kind == SublayerKind::Attention { divisors(d) } else { vec![1] };
                    for n in ns {
                        out.push((kind, phase, d, l, n));
                    }
                }
            }
        }
    }
    out
}

/// CSV of analytic (or measured) counts over a grid.
pub fn grid_csv(ds: &[u64], ls: &[u64], measured: bool) -> Result<String> {
    let mut s = format!("{}\n", OpCountReport::CSV_HEADER);
    for (kind, phase, d, l, n) in grid(ds, ls) {
        let r = if measured {
            measured_counts(kind, phase, d, l, n)?
        } else {
            analytic_counts(kind, phase, d, l, n)?
        };
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    Ok(s)
}
