//! Multi-head causal self-attention, full-sequence and incremental.

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::params::AttentionParams;
use crate::tensor::{self, softmax_prefix, Tensor};

fn check_heads(d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("heads ({heads}) must divide model_dim ({d})")));
    }
    Ok(d / heads)
}

/// Column-wise concatenation of per-head `d x h` projections into `d x d`.
fn stack_heads(ws: &[&Tensor], d: usize, h: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; d * d];
    for (j, w) in ws.iter().enumerate() {
        if w.shape() != [d, h] {
            return Err(Error::Dimension {
                op: "attention projection",
                lhs: vec![d, h],
                rhs: w.shape().to_vec(),
            });
        }
        for r in 0..d {
            out[r * d + j * h..r * d + (j + 1) * h].copy_from_slice(w.row(r));
        }
    }
    Ok(out)
}

struct Geometry {
    d: usize,
    h: usize,
    heads: usize,
    seq_len: usize,
}

impl Geometry {
    fn blocks(&self, rows: usize) -> usize {
        rows / self.seq_len
    }

    /// Copy head `j` of block `b` out of a `[rows, d]` matrix as `seq_len x h`.
    fn slice(&self, m: &[f64], b: usize, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.seq_len * self.h);
        for i in 0..self.seq_len {
            let r = b * self.seq_len + i;
            out.extend_from_slice(&m[r * self.d + j * self.h..r * self.d + (j + 1) * self.h]);
        }
        out
    }

    fn scatter(&self, dst: &mut [f64], src: &[f64], b: usize, j: usize) {
        for i in 0..self.seq_len {
            let r = b * self.seq_len + i;
            dst[r * self.d + j * self.h..r * self.d + (j + 1) * self.h]
                .copy_from_slice(&src[i * self.h..(i + 1) * self.h]);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scores, causal softmax and weighted values for one head of one sequence.
/// Returns `(r, a)` with `r: t x h` and `a: t x t` (zero above the diagonal).
fn head_forward(q: &[f64], k: &[f64], v: &[f64], t: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = (h as f64).sqrt();
    let mut a = vec![0.0; t * t];
    let mut r = vec![0.0; t * h];
    for i in 0..t {
        let qi = &q[i * h..(i + 1) * h];
        let arow = &mut a[i * t..(i + 1) * t];
        for c in 0..=i {
            arow[c] = dot(qi, &k[c * h..(c + 1) * h]) / scale;
        }
        softmax_prefix(arow, i + 1);
        let ri = &mut r[i * h..(i + 1) * h];
        for c in 0..=i {
            let w = arow[c];
            for (o, vv) in ri.iter_mut().zip(&v[c * h..(c + 1) * h]) {
                *o += w * vv;
            }
        }
    }
    (r, a)
}

/// Attention core on already projected `q, k, v` (each `[rows, d]`, heads in
/// column blocks). Returns the concatenated head outputs and all probability matrices.
fn core_forward(q: &[f64], k: &[f64], v: &[f64], g: &Geometry) -> (Vec<f64>, Vec<Vec<f64>>) {
    let rows = q.len() / g.d;
    let blocks = g.blocks(rows);
    let results = par::map_range(blocks * g.heads, |task| {
        let (b, j) = (task / g.heads, task % g.heads);
        head_forward(&g.slice(q, b, j), &g.slice(k, b, j), &g.slice(v, b, j), g.seq_len, g.h)
    });
    let mut out = vec![0.0; rows * g.d];
    let mut probs = Vec::with_capacity(results.len());
    for (task, (r, a)) in results.into_iter().enumerate() {
        g.scatter(&mut out, &r, task / g.heads, task % g.heads);
        probs.push(a);
    }
    (out, probs)
}

#[derive(Debug)]
struct CausalAttention {
    d: usize,
    h: usize,
    heads: usize,
    seq_len: usize,
    probs: Vec<Vec<f64>>,
}

impl CustomOp for CausalAttention {
    fn name(&self) -> &'static str {
        "causal attention"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let g = Geometry {
            d: self.d,
            h: self.h,
            heads: self.heads,
            seq_len: self.seq_len,
        };
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let rows = inputs[0].rows();
        let (t, h) = (g.seq_len, g.h);
        let scale = (h as f64).sqrt();
        let parts = par::map_range(self.probs.len(), |task| {
            let (b, j) = (task / g.heads, task % g.heads);
            let a = &self.probs[task];
            let (qh, kh, vh) = (g.slice(q, b, j), g.slice(k, b, j), g.slice(v, b, j));
            let dr = g.slice(grad.data(), b, j);
            let mut dq = vec![0.0; t * h];
            let mut dk = vec![0.0; t * h];
            let mut dv = vec![0.0; t * h];
            let mut ds = vec![0.0; t];
            for i in 0..t {
                let dri = &dr[i * h..(i + 1) * h];
                let arow = &a[i * t..(i + 1) * t];
                let mut mean = 0.0;
                for c in 0..=i {
                    ds[c] = dot(dri, &vh[c * h..(c + 1) * h]);
                    mean += arow[c] * ds[c];
                    for (o, x) in dv[c * h..(c + 1) * h].iter_mut().zip(dri) {
                        *o += arow[c] * x;
                    }
                }
                for c in 0..=i {
                    let dz = arow[c] * (ds[c] - mean) / scale;
                    for e in 0..h {
                        dq[i * h + e] += dz * kh[c * h + e];
                        dk[c * h + e] += dz * qh[i * h + e];
                    }
                }
            }
            (dq, dk, dv)
        });
        let mut dq = vec![0.0; rows * g.d];
        let mut dk = vec![0.0; rows * g.d];
        let mut dv = vec![0.0; rows * g.d];
        for (task, (a, b, c)) in parts.into_iter().enumerate() {
            let (blk, j) = (task / g.heads, task % g.heads);
            g.scatter(&mut dq, &a, blk, j);
            g.scatter(&mut dk, &b, blk, j);
            g.scatter(&mut dv, &c, blk, j);
        }
        let shape = vec![rows, g.d];
        Ok(vec![
            Tensor::new(shape.clone(), dq)?,
            Tensor::new(shape.clone(), dk)?,
            Tensor::new(shape, dv)?,
        ])
    }
}

fn check_rows(rows: usize, seq_len: usize) -> Result<()> {
    if seq_len == 0 || rows % seq_len != 0 {
        return Err(Error::Contract(format!(
            "{rows} rows do not split into sequences of length {seq_len}"
        )));
    }
    Ok(())
}

/// Attention over `x: [B*t, d]` holding `B` independent sequences of length `seq_len`.
pub fn mhsa_tape(
    tape: &mut Tape,
    p: &AttentionParams<Var>,
    x: Var,
    seq_len: usize,
    heads: usize,
) -> Result<Var> {
    let (rows, d) = tape.value(x).dims2()?;
    let h = check_heads(d, heads)?;
    check_rows(rows, seq_len)?;
    let wq = tape.concat_cols(&p.query)?;
    let wk = tape.concat_cols(&p.key)?;
    let wv = tape.concat_cols(&p.value)?;
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let g = Geometry {
        d,
        h,
        heads,
        seq_len,
    };
    let (out, probs) = core_forward(
        tape.value(q).data(),
        tape.value(k).data(),
        tape.value(v).data(),
        &g,
    );
    let r = tape.custom(
        &[q, k, v],
        Tensor::new(vec![rows, d], out)?,
        Box::new(CausalAttention {
            d,
            h,
            heads,
            seq_len,
            probs,
        }),
    )?;
    tape.matmul(r, p.out)
}

/// Attention over one sequence `x: [t, d]`.
pub fn mhsa_forward(x: &Tensor, p: &AttentionParams<&Tensor>, heads: usize) -> Result<Tensor> {
    let (t, d) = x.dims2()?;
    let h = check_heads(d, heads)?;
    let wq = stack_heads(&p.query, d, h)?;
    let wk = stack_heads(&p.key, d, h)?;
    let wv = stack_heads(&p.value, d, h)?;
    let q = tensor::mm(x.data(), &wq, t, d, d);
    let k = tensor::mm(x.data(), &wk, t, d, d);
    let v = tensor::mm(x.data(), &wv, t, d, d);
    let g = Geometry {
        d,
        h,
        heads,
        seq_len: t,
    };
    let (r, _) = core_forward(&q, &k, &v, &g);
    tensor::matmul(&Tensor::new(vec![t, d], r)?, p.out)
}

/// Keys and values of every position decoded so far, per head.
#[derive(Debug, Clone)]
pub struct KvCache {
    heads: usize,
    max_len: usize,
    len: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl KvCache {
    pub fn new(heads: usize, max_len: usize) -> Self {
        Self {
            heads,
            max_len,
            len: 0,
            keys: vec![Vec::new(); heads],
            values: vec![Vec::new(); heads],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }
}

/// Output row for a new position `x_t: [1, d]`, appending its key and value to `cache`.
pub fn mhsa_step(x_t: &Tensor, cache: &mut KvCache, p: &AttentionParams<&Tensor>) -> Result<Tensor> {
    let (one, d) = x_t.dims2()?;
    if one != 1 {
        return Err(Error::Dimension {
            op: "mhsa_step",
            lhs: vec![1, d],
            rhs: x_t.shape().to_vec(),
        });
    }
    let heads = cache.heads;
    if p.query.len() != heads {
        return Err(Error::Config(format!(
            "cache built for {heads} heads, parameters have {}",
            p.query.len()
        )));
    }
    let h = check_heads(d, heads)?;
    if cache.len >= cache.max_len {
        return Err(Error::ContextOverflow {
            len: cache.len + 1,
            max: cache.max_len,
        });
    }
    let t = cache.len + 1;
    let scale = (h as f64).sqrt();
    let mut r = vec![0.0; d];
    for j in 0..heads {
        let q = tensor::matmul(x_t, p.query[j])?;
        let k = tensor::matmul(x_t, p.key[j])?;
        let v = tensor::matmul(x_t, p.value[j])?;
        cache.keys[j].extend_from_slice(k.data());
        cache.values[j].extend_from_slice(v.data());
        let mut a: Vec<f64> = (0..t)
            .map(|c| dot(q.data(), &cache.keys[j][c * h..(c + 1) * h]) / scale)
            .collect();
        softmax_prefix(&mut a, t);
        let rj = &mut r[j * h..(j + 1) * h];
        for (c, w) in a.iter().enumerate() {
            for (o, vv) in rj.iter_mut().zip(&cache.values[j][c * h..(c + 1) * h]) {
                *o += w * vv;
            }
        }
    }
    cache.len = t;
    tensor::matmul(&Tensor::row_vector(r), p.out)
}
