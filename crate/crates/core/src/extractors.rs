//! Lag-weighted token mixers.
//!
//! Output row `i` of every extractor sums the input rows `j <= i`, each
//! weighted by the parameter for its lag `i - j + 1`. SHE weights lags with
//! `d x d` matrices, WE and HE with length-`d` vectors, ME with scalars. SHE,
//! HE and WE then gate the sum with `x_i · W_adj` and project with `W_out`.

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{HeParams, MeParams, MixerParams, SheParams, WeParams};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lag {
    Matrix,
    Vector,
    Scalar,
}

impl Lag {
    fn name(self) -> &'static str {
        match self {
            Lag::Matrix => "lag matrix",
            Lag::Vector => "lag vector",
            Lag::Scalar => "lag scalar",
        }
    }

    /// Shape of the stacked weights for `lags` lags of width `d`.
    fn weight_shape(self, lags: usize, d: usize) -> Vec<usize> {
        match self {
            Lag::Matrix => vec![lags, d, d],
            Lag::Vector => vec![lags, d],
            Lag::Scalar => vec![lags],
        }
    }

    fn per_lag(self, d: usize) -> usize {
        match self {
            Lag::Matrix => d * d,
            Lag::Vector => d,
            Lag::Scalar => 1,
        }
    }
}

/// Row pairs `(src, dst)` with `dst = src + lag` inside the same sequence.
fn lag_pairs(rows: usize, seq_len: usize, lag: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..rows / seq_len).flat_map(move |b| (lag..seq_len).map(move |i| (b * seq_len + i - lag, b * seq_len + i)))
}

fn check(x: &Tensor, w: &Tensor, kind: Lag, seq_len: usize) -> Result<(usize, usize)> {
    let (rows, d) = x.dims2()?;
    let lags = w.shape().first().copied().unwrap_or(0);
    if w.shape() != kind.weight_shape(lags, d).as_slice() {
        return Err(Error::Dimension {
            op: kind.name(),
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if seq_len == 0 || rows % seq_len != 0 {
        return Err(Error::Contract(format!(
            "{rows} rows do not split into sequences of length {seq_len}"
        )));
    }
    if seq_len > lags {
        return Err(Error::ContextOverflow {
            len: seq_len,
            max: lags,
        });
    }
    Ok((rows, d))
}

fn lag_forward(x: &Tensor, w: &Tensor, kind: Lag, seq_len: usize) -> Result<Tensor> {
    let (rows, d) = check(x, w, kind, seq_len)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; rows * d];
    for k in 0..seq_len {
        let wk = &wd[k * kind.per_lag(d)..(k + 1) * kind.per_lag(d)];
        match kind {
            Lag::Matrix => {
                let pairs: Vec<_> = lag_pairs(rows, seq_len, k).collect();
                let mut src = Vec::with_capacity(pairs.len() * d);
                for &(s, _) in &pairs {
                    src.extend_from_slice(&xd[s * d..(s + 1) * d]);
                }
                let prod = tensor::mm(&src, wk, pairs.len(), d, d);
                for (n, &(_, dst)) in pairs.iter().enumerate() {
                    for (o, v) in out[dst * d..(dst + 1) * d].iter_mut().zip(&prod[n * d..(n + 1) * d]) {
                        *o += v;
                    }
                }
            }
            Lag::Vector => {
                for (s, dst) in lag_pairs(rows, seq_len, k) {
                    let o = &mut out[dst * d..(dst + 1) * d];
                    for ((o, xv), wv) in o.iter_mut().zip(&xd[s * d..(s + 1) * d]).zip(wk) {
                        *o += xv * wv;
                    }
                }
            }
            Lag::Scalar => {
                for (s, dst) in lag_pairs(rows, seq_len, k) {
                    let o = &mut out[dst * d..(dst + 1) * d];
                    for (o, xv) in o.iter_mut().zip(&xd[s * d..(s + 1) * d]) {
                        *o += xv * wk[0];
                    }
                }
            }
        }
    }
    Tensor::new(vec![rows, d], out)
}

#[derive(Debug)]
struct LagSum {
    kind: Lag,
    seq_len: usize,
}

impl CustomOp for LagSum {
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (rows, d) = x.dims2()?;
        let (xd, wd, gd) = (x.data(), w.data(), grad.data());
        let per = self.kind.per_lag(d);
        let mut dx = vec![0.0; rows * d];
        let mut dw = vec![0.0; w.numel()];
        for k in 0..self.seq_len {
            let wk = &wd[k * per..(k + 1) * per];
            let dwk = &mut dw[k * per..(k + 1) * per];
            match self.kind {
                Lag::Matrix => {
                    let pairs: Vec<_> = lag_pairs(rows, self.seq_len, k).collect();
                    let mut src = Vec::with_capacity(pairs.len() * d);
                    let mut g = Vec::with_capacity(pairs.len() * d);
                    for &(s, dst) in &pairs {
                        src.extend_from_slice(&xd[s * d..(s + 1) * d]);
                        g.extend_from_slice(&gd[dst * d..(dst + 1) * d]);
                    }
                    let back = tensor::mm_nt(&g, wk, pairs.len(), d, d);
                    for (n, &(s, _)) in pairs.iter().enumerate() {
                        for (o, v) in dx[s * d..(s + 1) * d].iter_mut().zip(&back[n * d..(n + 1) * d]) {
                            *o += v;
                        }
                    }
                    dwk.copy_from_slice(&tensor::mm_tn(&src, &g, pairs.len(), d, d));
                }
                Lag::Vector => {
                    for (s, dst) in lag_pairs(rows, self.seq_len, k) {
                        for e in 0..d {
                            let gv = gd[dst * d + e];
                            dx[s * d + e] += gv * wk[e];
                            dwk[e] += gv * xd[s * d + e];
                        }
                    }
                }
                Lag::Scalar => {
                    for (s, dst) in lag_pairs(rows, self.seq_len, k) {
                        for e in 0..d {
                            let gv = gd[dst * d + e];
                            dx[s * d + e] += gv * wk[0];
                            dwk[0] += gv * xd[s * d + e];
                        }
                    }
                }
            }
        }
        Ok(vec![
            Tensor::new(vec![rows, d], dx)?,
            Tensor::new(w.shape().to_vec(), dw)?,
        ])
    }
}

fn lag_tape(tape: &mut Tape, x: Var, w: Var, kind: Lag, seq_len: usize) -> Result<Var> {
    let value = lag_forward(tape.value(x), tape.value(w), kind, seq_len)?;
    tape.custom(&[x, w], value, Box::new(LagSum { kind, seq_len }))
}

fn gate_tape(tape: &mut Tape, x: Var, ext: Var, adj: Var, out: Var) -> Result<Var> {
    let a = tape.matmul(x, adj)?;
    let g = tape.mul(a, ext)?;
    tape.matmul(g, out)
}

/// Any extractor over `x: [B*t, d]` holding `B` sequences of length `seq_len`.
/// Attention parameters are rejected.
pub fn extractor_tape(tape: &mut Tape, p: &MixerParams<Var>, x: Var, seq_len: usize) -> Result<Var> {
    match p {
        MixerParams::She(p) => {
            let ext = lag_tape(tape, x, p.ext, Lag::Matrix, seq_len)?;
            gate_tape(tape, x, ext, p.adj, p.out)
        }
        MixerParams::He(p) => {
            let xe = tape.matmul(x, p.in_ext)?;
            let ext = lag_tape(tape, xe, p.ext, Lag::Vector, seq_len)?;
            gate_tape(tape, x, ext, p.adj, p.out)
        }
        MixerParams::We(p) => {
            let ext = lag_tape(tape, x, p.ext, Lag::Vector, seq_len)?;
            gate_tape(tape, x, ext, p.adj, p.out)
        }
        MixerParams::Me(p) => lag_tape(tape, x, p.ext, Lag::Scalar, seq_len),
        MixerParams::Attention(_) => Err(Error::Contract("attention is not an extractor".into())),
    }
}

fn gate(x: &Tensor, ext: &Tensor, adj: &Tensor, out: &Tensor) -> Result<Tensor> {
    let a = tensor::matmul(x, adj)?;
    let g = tensor::ewise(tensor::EwiseOp::Mul, &a, ext)?;
    tensor::matmul(&g, out)
}

fn rows_of(x: &Tensor) -> Result<usize> {
    Ok(x.dims2()?.0.max(1))
}

/// Lag sum with matrix weights, then gate and output projection.
pub fn she_forward(x: &Tensor, p: &SheParams<&Tensor>) -> Result<Tensor> {
    let ext = lag_forward(x, p.ext, Lag::Matrix, rows_of(x)?)?;
    gate(x, &ext, p.adj, p.out)
}

/// Lag sum with vector weights, then gate and output projection.
pub fn we_forward(x: &Tensor, p: &WeParams<&Tensor>) -> Result<Tensor> {
    let ext = lag_forward(x, p.ext, Lag::Vector, rows_of(x)?)?;
    gate(x, &ext, p.adj, p.out)
}

/// Shared input transform, lag sum with vector weights, then gate (on the
/// untransformed input) and output projection.
pub fn he_forward(x: &Tensor, p: &HeParams<&Tensor>) -> Result<Tensor> {
    let xe = tensor::matmul(x, p.in_ext)?;
    let ext = lag_forward(&xe, p.ext, Lag::Vector, rows_of(x)?)?;
    gate(x, &ext, p.adj, p.out)
}

/// Lag sum with scalar weights only.
pub fn me_forward(x: &Tensor, p: &MeParams<&Tensor>) -> Result<Tensor> {
    lag_forward(x, p.ext, Lag::Scalar, rows_of(x)?)
}

pub fn extractor_forward(x: &Tensor, p: &MixerParams<&Tensor>) -> Result<Tensor> {
    match p {
        MixerParams::She(p) => she_forward(x, p),
        MixerParams::He(p) => he_forward(x, p),
        MixerParams::We(p) => we_forward(x, p),
        MixerParams::Me(p) => me_forward(x, p),
        MixerParams::Attention(_) => Err(Error::Contract("attention is not an extractor".into())),
    }
}

/// Rows seen so far by an incremental extractor: the raw inputs, or for HE
/// the inputs after the shared transform.
#[derive(Debug, Clone)]
pub struct ExtractorCache {
    max_len: usize,
    rows: Vec<Vec<f64>>,
}

impl ExtractorCache {
    pub fn new(max_len: usize) -> Self {
        Self {
            max_len,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Output row for a new position `x_t: [1, d]`, appending to `cache`.
pub fn extractor_step(x_t: &Tensor, cache: &mut ExtractorCache, p: &MixerParams<&Tensor>) -> Result<Tensor> {
    let (one, d) = x_t.dims2()?;
    if one != 1 {
        return Err(Error::Dimension {
            op: "extractor_step",
            lhs: vec![1, d],
            rhs: x_t.shape().to_vec(),
        });
    }
    let (ext_w, kind) = match p {
        MixerParams::She(p) => (p.ext, Lag::Matrix),
        MixerParams::He(p) => (p.ext, Lag::Vector),
        MixerParams::We(p) => (p.ext, Lag::Vector),
        MixerParams::Me(p) => (p.ext, Lag::Scalar),
        MixerParams::Attention(_) => return Err(Error::Contract("attention is not an extractor".into())),
    };
    let lags = ext_w.shape().first().copied().unwrap_or(0);
    if ext_w.shape() != kind.weight_shape(lags, d).as_slice() {
        return Err(Error::Dimension {
            op: kind.name(),
            lhs: x_t.shape().to_vec(),
            rhs: ext_w.shape().to_vec(),
        });
    }
    let max = cache.max_len.min(lags);
    if cache.len() >= max {
        return Err(Error::ContextOverflow {
            len: cache.len() + 1,
            max,
        });
    }
    let stored = match p {
        MixerParams::He(p) => tensor::matmul(x_t, p.in_ext)?.into_data(),
        _ => x_t.data().to_vec(),
    };
    cache.rows.push(stored);

    let t = cache.len();
    let per = kind.per_lag(d);
    let mut ext = vec![0.0; d];
    for k in 0..t {
        let src = &cache.rows[t - 1 - k];
        let wk = &ext_w.data()[k * per..(k + 1) * per];
        match kind {
            // same accumulation order as the row-at-a-time product in `tensor::mm`
            Lag::Matrix => {
                let mut prod = vec![0.0; d];
                for (r, xv) in src.iter().enumerate() {
                    for (o, wv) in prod.iter_mut().zip(&wk[r * d..(r + 1) * d]) {
                        *o += xv * wv;
                    }
                }
                ext.iter_mut().zip(&prod).for_each(|(o, v)| *o += v);
            }
            Lag::Vector => ext.iter_mut().zip(src).zip(wk).for_each(|((o, x), w)| *o += x * w),
            Lag::Scalar => ext.iter_mut().zip(src).for_each(|(o, x)| *o += x * wk[0]),
        }
    }
    let ext = Tensor::row_vector(ext);
    match p {
        MixerParams::She(p) => gate(x_t, &ext, p.adj, p.out),
        MixerParams::He(p) => gate(x_t, &ext, p.adj, p.out),
        MixerParams::We(p) => gate(x_t, &ext, p.adj, p.out),
        _ => Ok(ext),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::finite_diff_check_all;
    use crate::rng::{PrngState, Stream};

    fn random(shape: &[usize], rng: &mut PrngState) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
    }

    fn identity(d: usize) -> Tensor {
        let mut t = Tensor::zeros(&[d, d]);
        for i in 0..d {
            t.data_mut()[i * d + i] = 1.0;
        }
        t
    }

    // Literal double loops over (i, j <= i) with lag index i - j.
    fn ext_oracle(x: &Tensor, w: &Tensor, kind: Lag) -> Vec<Vec<f64>> {
        let (t, d) = x.dims2().unwrap();
        let mut out = vec![vec![0.0; d]; t];
        for i in 0..t {
            for j in 0..=i {
                let k = i - j;
                for e in 0..d {
                    out[i][e] += match kind {
                        Lag::Matrix => (0..d).map(|r| x.data()[j * d + r] * w.data()[k * d * d + r * d + e]).sum::<f64>(),
                        Lag::Vector => x.data()[j * d + e] * w.data()[k * d + e],
                        Lag::Scalar => x.data()[j * d + e] * w.data()[k],
                    };
                }
            }
        }
        out
    }

    fn vecmat(v: &[f64], m: &Tensor) -> Vec<f64> {
        let d = v.len();
        let n = m.cols();
        (0..n).map(|c| (0..d).map(|r| v[r] * m.data()[r * n + c]).sum()).collect()
    }

    fn gate_oracle(x: &Tensor, ext: &[Vec<f64>], adj: &Tensor, out: &Tensor) -> Tensor {
        let rows: Vec<Vec<f64>> = ext
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let a = vecmat(x.row(i), adj);
                let g: Vec<f64> = a.iter().zip(e).map(|(a, b)| a * b).collect();
                vecmat(&g, out)
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    struct Model {
        x: Tensor,
        she_ext: Tensor,
        vec_ext: Tensor,
        me_ext: Tensor,
        in_ext: Tensor,
        adj: Tensor,
        out: Tensor,
    }

    impl Model {
        fn random(t: usize, d: usize, l: usize, seed: u64) -> Self {
            let mut rng = PrngState::new(seed, Stream::Init);
            Self {
                x: random(&[t, d], &mut rng),
                she_ext: random(&[l, d, d], &mut rng),
                vec_ext: random(&[l, d], &mut rng),
                me_ext: random(&[l], &mut rng),
                in_ext: random(&[d, d], &mut rng),
                adj: random(&[d, d], &mut rng),
                out: random(&[d, d], &mut rng),
            }
        }

        fn mixer(&self, kind: crate::config::SublayerKind) -> MixerParams<&Tensor> {
            use crate::config::SublayerKind as K;
            match kind {
                K::She => MixerParams::She(SheParams { ext: &self.she_ext, adj: &self.adj, out: &self.out }),
                K::He => MixerParams::He(HeParams { ext: &self.vec_ext, in_ext: &self.in_ext, adj: &self.adj, out: &self.out }),
                K::We => MixerParams::We(WeParams { ext: &self.vec_ext, adj: &self.adj, out: &self.out }),
                K::Me => MixerParams::Me(MeParams { ext: &self.me_ext }),
                K::Attention => unreachable!(),
            }
        }
    }

    const KINDS: [crate::config::SublayerKind; 4] = [
        crate::config::SublayerKind::She,
        crate::config::SublayerKind::He,
        crate::config::SublayerKind::We,
        crate::config::SublayerKind::Me,
    ];

    #[test]
    fn she_matches_double_loop_oracle() {
        let m = Model::random(3, 4, 5, 1);
        let got = she_forward(&m.x, &SheParams { ext: &m.she_ext, adj: &m.adj, out: &m.out }).unwrap();
        let want = gate_oracle(&m.x, &ext_oracle(&m.x, &m.she_ext, Lag::Matrix), &m.adj, &m.out);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn we_matches_loop_oracle() {
        let m = Model::random(3, 4, 3, 2);
        let got = we_forward(&m.x, &WeParams { ext: &m.vec_ext, adj: &m.adj, out: &m.out }).unwrap();
        let want = gate_oracle(&m.x, &ext_oracle(&m.x, &m.vec_ext, Lag::Vector), &m.adj, &m.out);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn he_matches_loop_oracle() {
        let m = Model::random(3, 4, 4, 3);
        let got = he_forward(&m.x, &HeParams { ext: &m.vec_ext, in_ext: &m.in_ext, adj: &m.adj, out: &m.out }).unwrap();
        let xe = Tensor::from_rows(&(0..3).map(|i| vecmat(m.x.row(i), &m.in_ext)).collect::<Vec<_>>()).unwrap();
        let want = gate_oracle(&m.x, &ext_oracle(&xe, &m.vec_ext, Lag::Vector), &m.adj, &m.out);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn me_matches_loop_oracle() {
        let m = Model::random(4, 3, 4, 4);
        let got = me_forward(&m.x, &MeParams { ext: &m.me_ext }).unwrap();
        let want = Tensor::from_rows(&ext_oracle(&m.x, &m.me_ext, Lag::Scalar)).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn closed_gate_gives_zeros() {
        let m = Model::random(3, 4, 3, 5);
        let mut ext = Tensor::zeros(&[3, 4, 4]);
        ext.data_mut()[..16].copy_from_slice(identity(4).data());
        let zero = Tensor::zeros(&[4, 4]);
        let y = she_forward(&m.x, &SheParams { ext: &ext, adj: &zero, out: &m.out }).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        let y = she_forward(&m.x, &SheParams { ext: &Tensor::zeros(&[3, 4, 4]), adj: &m.adj, out: &m.out }).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        let y = he_forward(&m.x, &HeParams { ext: &Tensor::zeros(&[3, 4]), in_ext: &m.in_ext, adj: &m.adj, out: &m.out }).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vector_extraction_identity_and_prefix_sums() {
        let m = Model::random(3, 4, 3, 6);
        let mut w = Tensor::zeros(&[3, 4]);
        w.data_mut()[..4].fill(1.0);
        assert_eq!(lag_forward(&m.x, &w, Lag::Vector, 3).unwrap(), m.x);
        let ones = Tensor::filled(&[3, 4], 1.0);
        let sums = lag_forward(&m.x, &ones, Lag::Vector, 3).unwrap();
        for e in 0..4 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += m.x.data()[i * 4 + e];
                assert!((sums.data()[i * 4 + e] - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn me_identity_and_prefix_sums() {
        let m = Model::random(4, 3, 4, 7);
        let id = Tensor::new(vec![4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(me_forward(&m.x, &MeParams { ext: &id }).unwrap(), m.x);
        let ones = Tensor::filled(&[4], 1.0);
        let y = me_forward(&m.x, &MeParams { ext: &ones }).unwrap();
        let last: f64 = (0..4).map(|i| m.x.data()[i * 3]).sum();
        assert!((y.data()[9] - last).abs() < 1e-15);
    }

    #[test]
    fn he_with_identity_transform_is_we() {
        let m = Model::random(4, 4, 4, 8);
        let id = identity(4);
        let he = he_forward(&m.x, &HeParams { ext: &m.vec_ext, in_ext: &id, adj: &m.adj, out: &m.out }).unwrap();
        let we = we_forward(&m.x, &WeParams { ext: &m.vec_ext, adj: &m.adj, out: &m.out }).unwrap();
        assert!(he.max_abs_diff(&we) < 1e-15);
    }

    #[test]
    fn diagonal_she_is_we() {
        let m = Model::random(4, 3, 4, 9);
        let mut diag = Tensor::zeros(&[4, 3, 3]);
        for k in 0..4 {
            for e in 0..3 {
                diag.data_mut()[k * 9 + e * 3 + e] = m.vec_ext.data()[k * 3 + e];
            }
        }
        let she = she_forward(&m.x, &SheParams { ext: &diag, adj: &m.adj, out: &m.out }).unwrap();
        let we = we_forward(&m.x, &WeParams { ext: &m.vec_ext, adj: &m.adj, out: &m.out }).unwrap();
        assert!(she.max_abs_diff(&we) < 1e-14);
    }

    #[test]
    fn constant_vectors_extract_like_me() {
        let m = Model::random(4, 3, 4, 10);
        let vecs = Tensor::new(vec![4, 3], (0..12).map(|i| m.me_ext.data()[i / 3]).collect()).unwrap();
        let a = lag_forward(&m.x, &vecs, Lag::Vector, 4).unwrap();
        let b = me_forward(&m.x, &MeParams { ext: &m.me_ext }).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn too_long_sequence_overflows() {
        let m = Model::random(5, 3, 4, 11);
        for kind in KINDS {
            assert!(matches!(extractor_forward(&m.x, &m.mixer(kind)), Err(Error::ContextOverflow { len: 5, max: 4 })));
        }
    }

    #[test]
    fn causal_and_lag_indexed() {
        let m = Model::random(4, 3, 6, 12);
        for kind in KINDS {
            let base = extractor_forward(&m.x, &m.mixer(kind)).unwrap();
            let mut x2 = m.x.clone();
            x2.data_mut()[2 * 3 + 1] += 0.5;
            let pert = extractor_forward(&x2, &m.mixer(kind)).unwrap();
            assert_eq!(base.row(0), pert.row(0));
            assert_eq!(base.row(1), pert.row(1));
            assert_ne!(base.row(2), pert.row(2));
            // dropping the first row shifts outputs: row i of the tail uses the same lags
            let tail = Tensor::from_rows(&[m.x.row(1), m.x.row(2), m.x.row(3)]).unwrap();
            let shifted = extractor_forward(&tail, &m.mixer(kind)).unwrap();
            let first = Tensor::from_rows(&[m.x.row(1)]).unwrap();
            let single = extractor_forward(&first, &m.mixer(kind)).unwrap();
            assert_eq!(shifted.row(0), single.row(0));
        }
    }

    #[test]
    fn steps_match_full_forward() {
        let m = Model::random(6, 4, 6, 13);
        for kind in KINDS {
            let full = extractor_forward(&m.x, &m.mixer(kind)).unwrap();
            let mut cache = ExtractorCache::new(6);
            for i in 0..6 {
                let row = Tensor::row_vector(m.x.row(i).to_vec());
                let y = extractor_step(&row, &mut cache, &m.mixer(kind)).unwrap();
                let diff = y.data().iter().zip(full.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-12, "{kind} row {i}: {diff}");
            }
            let extra = extractor_step(&Tensor::row_vector(m.x.row(0).to_vec()), &mut cache, &m.mixer(kind));
            assert!(matches!(extra, Err(Error::ContextOverflow { .. })));
        }
    }

    #[test]
    fn batched_tape_matches_single_sequences() {
        let (t, d, l, blocks) = (3, 4, 4, 3);
        let m = Model::random(blocks * t, d, l, 14);
        for kind in KINDS {
            let mut tape = Tape::new();
            let x = tape.constant(m.x.clone());
            let p = m.mixer(kind).map(&mut |t: &&Tensor| tape.constant((*t).clone()));
            let y = extractor_tape(&mut tape, &p, x, t).unwrap();
            for b in 0..blocks {
                let rows: Vec<&[f64]> = (0..t).map(|i| m.x.row(b * t + i)).collect();
                let single = extractor_forward(&Tensor::from_rows(&rows).unwrap(), &m.mixer(kind)).unwrap();
                for i in 0..t {
                    assert_eq!(tape.value(y).row(b * t + i), single.row(i), "{kind}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (t, d, l) = (3, 3, 4);
        let m = Model::random(2 * t, d, l, 15);
        let weights = Model::random(2 * t, d, l, 16).x;
        for kind in KINDS {
            let owned: Vec<Tensor> = m.mixer(kind).items().into_iter().map(|t| (*t).clone()).collect();
            let mut inputs = vec![m.x.clone()];
            inputs.extend(owned);
            let err = finite_diff_check_all(
                |tape, v| {
                    let mut it = v[1..].iter().copied();
                    let p = m.mixer(kind).map(&mut |_| it.next().unwrap());
                    let y = extractor_tape(tape, &p, v[0], t)?;
                    let w = tape.constant(weights.clone());
                    let prod = tape.mul(y, w)?;
                    tape.sum(prod)
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{kind}: {err}");
        }
    }
}
