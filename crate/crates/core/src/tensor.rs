//! Dense row-major `f64` tensors and the forward kernels shared by the tape
//! and the cache-based decoding paths.

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        debug_assert!(!shape.is_empty() && !shape.contains(&0));
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A `1 × n` row vector.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Contract(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::Numeric(format!("{op} produced a non-finite value")))
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        Ok(Tensor {
            shape: vec![c, r],
            data: transpose_raw(&self.data, r, c),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in comparison");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
///
/// Each output entry is accumulated in increasing `k` order starting from
/// zero, the same sequence of roundings as a textbook triple loop.
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const ROWS_PER_TASK: usize = 16;
    par::for_each_chunk(c, ROWS_PER_TASK * n, |chunk, out| {
        let r0 = chunk * ROWS_PER_TASK;
        let rows = out.len() / n;
        gemm_rows_dispatch(&a[r0 * k..(r0 + rows) * k], b, out, rows, k, n);
    });
}

fn gemm_rows_dispatch(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { gemm_rows_avx2(a, b, c, m, k, n) };
            return;
        }
    }
    gemm_rows(a, b, c, m, k, n);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_rows_avx2(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_rows(a, b, c, m, k, n)
}

#[inline(always)]
fn gemm_rows(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        crow.fill(0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `a · b` on raw slices, allocating the output.
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(a, b, &mut c, m, k, n);
    c
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let bt = transpose_raw(b, n, k);
    mm(a, &bt, m, k, n)
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub(crate) fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let at = transpose_raw(a, k, m);
    mm(&at, b, m, k, n)
}

/// Matrix product of `a: p×q` and `b: q×r`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (p, q) = a.dims2()?;
    let (q2, r) = b.dims2()?;
    if q != q2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Tensor {
        shape: vec![p, r],
        data: mm(&a.data, &b.data, p, q, r),
    }
    .ensure_finite("matmul")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwiseOp {
    Add,
    Sub,
    Mul,
}

impl EwiseOp {
    #[inline]
    pub(crate) fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            EwiseOp::Add => x + y,
            EwiseOp::Sub => x - y,
            EwiseOp::Mul => x * y,
        }
    }
}

/// True when `b` is a `1 × cols` row vector that broadcasts over the rows of `a`.
pub(crate) fn broadcasts_row(a: &[usize], b: &[usize]) -> bool {
    matches!((a, b), ([_, c], [1, c2]) if c == c2)
}

/// Element-wise `op(a, b)`; `b` may be a row vector broadcast over `a`'s rows.
pub fn ewise(op: EwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let data = if a.shape == b.shape {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect()
    } else if broadcasts_row(&a.shape, &b.shape) {
        let c = b.data.len();
        a.data
            .iter()
            .enumerate()
            .map(|(i, &x)| op.apply(x, b.data[i % c]))
            .collect()
    } else {
        return Err(Error::Dimension {
            op: "ewise",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    };
    Tensor {
        shape: a.shape.clone(),
        data,
    }
    .ensure_finite("ewise")
}

/// In-place max-subtracted softmax of the first `valid` entries of `row`;
/// the remaining entries become exactly zero.
pub(crate) fn softmax_prefix(row: &mut [f64], valid: usize) {
    let (head, tail) = row.split_at_mut(valid);
    let max = head.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in head.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in head.iter_mut() {
        *v /= sum;
    }
    tail.fill(0.0);
}

/// Row-wise softmax of `z: p×q`. With `valid_len`, row `i` is normalised over
/// its first `valid_len[i]` entries and the rest are set to zero.
pub fn softmax_rows(z: &Tensor, valid_len: Option<&[usize]>) -> Result<Tensor> {
    let (p, q) = z.dims2()?;
    if let Some(v) = valid_len {
        if v.len() != p {
            return Err(Error::Index(format!(
                "valid_len has {} entries for {p} rows",
                v.len()
            )));
        }
        if let Some((i, bad)) = v.iter().enumerate().find(|(_, &x)| x == 0 || x > q) {
            return Err(Error::Index(format!(
                "valid_len[{i}] = {bad} outside [1, {q}]"
            )));
        }
    }
    let mut out = z.clone();
    for (i, row) in out.data.chunks_mut(q).enumerate() {
        softmax_prefix(row, valid_len.map_or(q, |v| v[i]));
    }
    out.ensure_finite("softmax")
}
