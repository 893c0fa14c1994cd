//! Float32 kernels. Every reduction accumulates in ascending flat-index order
//! starting from 0.0 so results are reproducible bit for bit.

use super::Tensor;
use crate::dtype::DType;
use crate::error::{Error, Result};

/// Output shape of a binary op under trailing-axis broadcasting.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", a, b)),
        };
    }
    Ok(out)
}

/// Row-major product `a[m,k] · b[k,n]`. Each output element is summed over
/// `k` in ascending order, identical to the textbook triple loop.
pub(crate) fn gemm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    gemm_into(a, b, m, k, n, &mut out);
    out
}

/// Accumulates `a · b` into `out`.
pub(crate) fn gemm_into(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    for (a_row, out_row) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn require_f32(t: &Tensor) -> Result<()> {
    if t.dtype() != DType::F32 {
        return Err(Error::DTypeMismatch {
            expected: DType::F32,
            found: t.dtype(),
        });
    }
    Ok(())
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        require_f32(self)?;
        require_f32(other)?;
        let shape = broadcast_shapes(self.shape(), other.shape())
            .map_err(|_| Error::shape(op, self.shape(), other.shape()))?;
        let lhs = if self.shape() == shape.as_slice() {
            self.clone()
        } else {
            self.broadcast_to(&shape)?
        };
        let rhs = if other.shape() == shape.as_slice() {
            other.clone()
        } else {
            other.broadcast_to(&shape)?
        };
        let out = lhs.with_slice(|a: &[f32]| {
            rhs.with_slice(|b: &[f32]| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
        })??;
        Ok(self.sibling_f32(out, shape))
    }

    fn unary(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        require_f32(self)?;
        let out = self.with_slice(|a: &[f32]| a.iter().map(|&x| f(x)).collect::<Vec<_>>())?;
        Ok(self.sibling_f32(out, self.shape().to_vec()))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(|x| -x)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(f32::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        self.unary(f32::ln)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(|x| if x > 0.0 { x } else { 0.0 })
    }

    /// 1.0 where `x > 0`, else 0.0; the relu subgradient with 0 at the kink.
    pub fn relu_mask(&self) -> Result<Tensor> {
        self.unary(|x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn scale(&self, s: f32) -> Result<Tensor> {
        self.unary(|x| x * s)
    }

    pub fn add_scalar(&self, s: f32) -> Result<Tensor> {
        self.unary(|x| x + s)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        require_f32(self)?;
        let s = self.with_slice(|a: &[f32]| a.iter().fold(0.0f32, |acc, &x| acc + x))?;
        Ok(self.sibling_f32(vec![s], Vec::new()))
    }

    fn reduce_axis(
        &self,
        axis: usize,
        keepdim: bool,
        init: impl Fn(&[f32]) -> Vec<f32>,
        fold: impl Fn(f32, f32) -> f32,
        skip_first: bool,
    ) -> Result<Tensor> {
        require_f32(self)?;
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::InvalidAxis { axis, rank });
        }
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let out = self.with_slice(|x: &[f32]| {
            let mut out = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                let block = &x[o * len * inner..(o + 1) * len * inner];
                let mut acc = init(block);
                let start = if skip_first { 1 } else { 0 };
                for a in start..len {
                    for (acc_i, &v) in acc.iter_mut().zip(&block[a * inner..(a + 1) * inner]) {
                        *acc_i = fold(*acc_i, v);
                    }
                }
                out.extend(acc);
            }
            out
        })?;
        let mut out_shape = shape.to_vec();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        Ok(self.sibling_f32(out, out_shape))
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let inner: usize = self.shape().get(axis + 1..).map_or(1, |s| s.iter().product());
        self.reduce_axis(axis, keepdim, |_| vec![0.0; inner], |a, b| a + b, false)
    }

    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        if self.shape().get(axis) == Some(&0) {
            return Err(Error::shape("max", self.shape(), &[1]));
        }
        let inner: usize = self.shape().get(axis + 1..).map_or(1, |s| s.iter().product());
        self.reduce_axis(axis, keepdim, |block| block[..inner].to_vec(), f32::max, true)
    }

    pub fn max_all(&self) -> Result<Tensor> {
        require_f32(self)?;
        let m = self.with_slice(|a: &[f32]| a.iter().copied().reduce(f32::max))?;
        let m = m.ok_or_else(|| Error::shape("max", self.shape(), &[1]))?;
        Ok(self.sibling_f32(vec![m], Vec::new()))
    }

    /// Sums broadcast axes away so the result has `shape`; the adjoint of
    /// broadcasting `shape` up to `self.shape()`.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let full = broadcast_shapes(self.shape(), shape)?;
        if full != self.shape() {
            return Err(Error::shape("sum_to_shape", self.shape(), shape));
        }
        let mut t = self.clone();
        while t.rank() > shape.len() {
            t = t.sum_axis(0, false)?;
        }
        for (axis, &d) in shape.iter().enumerate() {
            if d == 1 && t.shape()[axis] != 1 {
                t = t.sum_axis(axis, true)?;
            }
        }
        Ok(t)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        require_f32(self)?;
        require_f32(other)?;
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let out = self.with_slice(|x: &[f32]| other.with_slice(|y: &[f32]| gemm(x, y, m, k, n)))??;
        Ok(self.sibling_f32(out, vec![m, n]))
    }

    /// Index of the largest entry in each row of a `[rows, cols]` tensor.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        require_f32(self)?;
        if self.rank() != 2 {
            return Err(Error::shape("argmax_rows", self.shape(), &[0, 0]));
        }
        let cols = self.shape()[1].max(1);
        self.with_slice(|x: &[f32]| {
            x.chunks_exact(cols)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0
                })
                .collect()
        })
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// Returns the loss and the row-wise softmax probabilities.
pub(crate) fn softmax_cross_entropy(logits: &Tensor, labels: &Tensor) -> Result<(f32, Vec<f32>)> {
    require_f32(logits)?;
    if labels.dtype() != DType::I32 {
        return Err(Error::DTypeMismatch {
            expected: DType::I32,
            found: labels.dtype(),
        });
    }
    let shape = logits.shape();
    if shape.len() != 2 || labels.shape() != [shape[0]] || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::shape("softmax_cross_entropy", shape, labels.shape()));
    }
    let (batch, classes) = (shape[0], shape[1]);
    let labels = labels.to_vec::<i32>()?;
    if let Some(&bad) = labels.iter().find(|&&l| l < 0 || l as usize >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad as i64,
            classes,
        });
    }
    logits.with_slice(|x: &[f32]| {
        let mut probs = Vec::with_capacity(batch * classes);
        let mut total = 0.0f32;
        for (row, &label) in x.chunks_exact(classes).zip(&labels) {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let start = probs.len();
            let mut denom = 0.0f32;
            for &v in row {
                let e = (v - m).exp();
                denom += e;
                probs.push(e);
            }
            for p in &mut probs[start..] {
                *p /= denom;
            }
            total += m + denom.ln() - row[label as usize];
        }
        (total / batch as f32, probs)
    })
}
