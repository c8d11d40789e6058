//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`]; a node's inputs always
//! precede it, so append order is a topological order and [`Tape::backward`]
//! is a single reverse sweep.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::PrngState;
use crate::tensor::{self, broadcasts_row, EwiseOp, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive with a hand-written backward rule, registered from outside this module.
pub trait CustomOp: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor)
        -> Result<Vec<Tensor>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Ewise(EwiseOp, Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
        scale: f64,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    Nll {
        probs: Var,
        targets: Vec<usize>,
        floor: f64,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{} produced a non-finite value", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn ewise(&mut self, op: EwiseOp, a: Var, b: Var) -> Result<Var> {
        let value = tensor::ewise(op, self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Ewise(op, a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(EwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(EwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(EwiseOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())?;
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect())?;
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Row-wise softmax over full rows.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = tensor::softmax_rows(self.value(x), None)?;
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Softmax { x }, rg)
    }

    /// Row-wise layer normalisation with population variance.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        if cols < 2 {
            return Err(Error::Contract(format!(
                "layer normalisation needs at least 2 features per row, got {cols}"
            )));
        }
        for p in [gain, bias] {
            if self.value(p).shape() != [1, cols] {
                return Err(Error::Dimension {
                    op: "layernorm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let (out, xhat, rstd) =
            layernorm_rows(xv.data(), cols, self.value(gain).data(), self.value(bias).data(), eps);
        let value = Tensor::new(vec![rows, cols], out)?;
        let rg = self.any_grad(&[x, gain, bias]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Rows `table[ids[i]] * scale`, stacked.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], scale: f64) -> Result<Var> {
        let t = self.value(table);
        let (n, c) = t.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= n {
                return Err(Error::Index(format!("row {id} of a table with {n} rows")));
            }
            out.extend(t.row(id).iter().map(|v| v * scale));
        }
        let value = Tensor::new(vec![ids.len(), c], out)?;
        let rg = self.any_grad(&[table]);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                scale,
            },
            rg,
        )
    }

    /// Inverted dropout: each entry is zeroed with probability `p`, survivors
    /// are scaled by `1/(1-p)`. `p == 0` returns `x` unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut PrngState) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.numel())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let value = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        )?;
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    /// Place matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        let rg = self.any_grad(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Mean over rows of `-ln(max(probs[i, targets[i]], floor))`.
    pub fn nll(&mut self, probs: Var, targets: &[usize], floor: f64) -> Result<Var> {
        let p = self.value(probs);
        let (rows, cols) = p.dims2()?;
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "nll",
                lhs: p.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::Vocabulary { id: t, size: cols });
            }
            total -= p.data()[i * cols + t].max(floor).ln();
        }
        let value = Tensor::scalar(total / rows as f64);
        let rg = self.any_grad(&[probs]);
        self.push(
            value,
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                floor,
            },
            rg,
        )
    }

    /// Record the result of a [`CustomOp`] computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        let rg = self.any_grad(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse sweep from a one-element `loss`. Leaves that require gradients
    /// but do not influence the loss receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.value(v).shape(), "gradient shape for {v:?}");
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let shaped = |like: &Tensor, data: Vec<f64>| Tensor::new(like.shape().to_vec(), data);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q) = av.dims2()?;
                let r = bv.dims2()?.1;
                if self.requires_grad(*a) {
                    let da = tensor::mm_nt(g.data(), bv.data(), p, r, q);
                    self.accumulate(grads, *a, shaped(av, da)?);
                }
                if self.requires_grad(*b) {
                    let db = tensor::mm_tn(av.data(), g.data(), p, q, r);
                    self.accumulate(grads, *b, shaped(bv, db)?);
                }
            }
            Op::Ewise(op, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let broadcast = av.shape() != bv.shape() && broadcasts_row(av.shape(), bv.shape());
                let c = bv.numel();
                let bval = |i: usize| if broadcast { bv.data()[i % c] } else { bv.data()[i] };
                if self.requires_grad(*a) {
                    let da: Vec<f64> = match op {
                        EwiseOp::Add | EwiseOp::Sub => g.data().to_vec(),
                        EwiseOp::Mul => g.data().iter().enumerate().map(|(i, gv)| gv * bval(i)).collect(),
                    };
                    self.accumulate(grads, *a, shaped(av, da)?);
                }
                if self.requires_grad(*b) {
                    let per_entry: Vec<f64> = match op {
                        EwiseOp::Add => g.data().to_vec(),
                        EwiseOp::Sub => g.data().iter().map(|v| -v).collect(),
                        EwiseOp::Mul => g.data().iter().zip(av.data()).map(|(gv, x)| gv * x).collect(),
                    };
                    let db = if broadcast { column_sums(&per_entry, c) } else { per_entry };
                    self.accumulate(grads, *b, shaped(bv, db)?);
                }
            }
            Op::Scale(a, s) => {
                let da = g.data().iter().map(|v| v * s).collect();
                self.accumulate(grads, *a, shaped(g, da)?);
            }
            Op::Relu(a) => {
                let da = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, shaped(g, da)?);
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                self.accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), gv));
            }
            Op::Softmax { x } => {
                let y = &node.value;
                let cols = y.cols();
                let mut dz = vec![0.0; y.numel()];
                for ((drow, yrow), grow) in dz
                    .chunks_mut(cols)
                    .zip(y.data().chunks(cols))
                    .zip(g.data().chunks(cols))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(grads, *x, shaped(y, dz)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = node.value.cols();
                let gv = self.value(*gain).data();
                if self.requires_grad(*gain) {
                    let prod: Vec<f64> = g.data().iter().zip(xhat).map(|(a, b)| a * b).collect();
                    let dg = column_sums(&prod, cols);
                    self.accumulate(grads, *gain, Tensor::row_vector(dg));
                }
                if self.requires_grad(*bias) {
                    self.accumulate(grads, *bias, Tensor::row_vector(column_sums(g.data(), cols)));
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; g.numel()];
                    let n = cols as f64;
                    for (i, r) in rstd.iter().enumerate() {
                        let grow = &g.data()[i * cols..(i + 1) * cols];
                        let hrow = &xhat[i * cols..(i + 1) * cols];
                        let dh: Vec<f64> = grow.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..cols {
                            dx[i * cols + j] = r * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, shaped(g, dx)?);
                }
            }
            Op::Gather { table, ids, scale } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut dt = vec![0.0; tv.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id * c..(id + 1) * c];
                    for (d, gv) in dst.iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                        *d += gv * scale;
                    }
                }
                self.accumulate(grads, *table, shaped(tv, dt)?);
            }
            Op::Dropout { x, mask } => {
                let dx = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(grads, *x, shaped(g, dx)?);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            dp.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![rows, w], dp)?);
                    }
                    offset += w;
                }
            }
            Op::Nll {
                probs,
                targets,
                floor,
            } => {
                let pv = self.value(*probs);
                let cols = pv.cols();
                let scale = g.item()? / targets.len() as f64;
                let mut dp = vec![0.0; pv.numel()];
                for (i, &t) in targets.iter().enumerate() {
                    let p = pv.data()[i * cols + t];
                    if p > *floor {
                        dp[i * cols + t] = -scale / p;
                    }
                }
                self.accumulate(grads, *probs, shaped(pv, dp)?);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let dins = op.backward(&values, &node.value, g)?;
                if dins.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        dins.len(),
                        inputs.len()
                    )));
                }
                for (v, d) in inputs.iter().zip(dins) {
                    self.accumulate(grads, *v, d);
                }
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Ewise(..) => "ewise",
        Op::Scale(..) => "scale",
        Op::Relu(..) => "relu",
        Op::Sum(..) => "sum",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layernorm",
        Op::Gather { .. } => "gather",
        Op::Dropout { .. } => "dropout",
        Op::ConcatCols(..) => "concat",
        Op::Nll { .. } => "nll",
        Op::Custom { op, .. } => op.name(),
    }
}

/// Row-wise `g * (x - mean) / sqrt(var + eps) + b`, also returning the
/// normalised values and reciprocal deviations.
pub(crate) fn layernorm_rows(
    x: &[f64],
    cols: usize,
    g: &[f64],
    b: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let (mean, var) = mean_var(row);
        let r = 1.0 / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..cols {
            let h = (row[j] - mean) * r;
            xhat[i * cols + j] = h;
            out[i * cols + j] = g[j] * h + b[j];
        }
    }
    (out, xhat, rstd)
}

/// Mean and population variance, two-pass.
pub(crate) fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub(crate) fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in data.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Largest discrepancies between reverse-mode and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheck {
    /// `|analytic - numeric|`
    pub max_abs: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)`, zero where both vanish
    pub max_rel: f64,
    /// `|analytic - numeric| / max(1, |analytic|)`
    pub max_scaled: f64,
    /// Per input, `||analytic - numeric|| / max(||analytic||, ||numeric||)` in the
    /// Euclidean norm; the largest over inputs.
    pub max_tensor_rel: f64,
    pub coordinates: usize,
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences over every coordinate of every input.
pub fn finite_diff_report<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric("objective is not finite".into()))
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck::default();
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .ok_or_else(|| Error::Contract("missing gradient for an input".into()))?
            .clone();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..probe[k].numel() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            report.max_abs = report.max_abs.max(diff);
            if scale > 0.0 {
                report.max_rel = report.max_rel.max(diff / scale);
            }
            report.max_scaled = report.max_scaled.max(diff / a.abs().max(1.0));
            report.coordinates += 1;
            diff2 += diff * diff;
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let scale = a2.max(n2).sqrt();
        if scale > 0.0 {
            report.max_tensor_rel = report.max_tensor_rel.max(diff2.sqrt() / scale);
        }
    }
    Ok(report)
}

/// [`finite_diff_report`] reduced to the largest `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check_all<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(finite_diff_report(f, inputs, eps)?.max_scaled)
}

/// Single-input form of [`finite_diff_check_all`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_all(|t, v| f(t, v[0]), std::slice::from_ref(x), eps)
}
