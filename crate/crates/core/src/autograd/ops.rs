use super::{record, OpKind, Variable};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::tensor::{self, softmax_cross_entropy_kernel, ConvGeometry, Tensor};

impl Variable {
    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.data(), other.data());
        let out = a.add(&b)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(record(
            OpKind::Add,
            &[self, other],
            out,
            Box::new(move |g, needs| {
                Ok(vec![
                    needs[0].then(|| g.sum_to_shape(&sa)).transpose()?,
                    needs[1].then(|| g.sum_to_shape(&sb)).transpose()?,
                ])
            }),
        ))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.data(), other.data());
        let out = a.mul(&b)?;
        Ok(record(
            OpKind::Mul,
            &[self, other],
            out,
            Box::new(move |g, needs| {
                Ok(vec![
                    needs[0].then(|| g.mul(&b)?.sum_to_shape(a.shape())).transpose()?,
                    needs[1].then(|| g.mul(&a)?.sum_to_shape(b.shape())).transpose()?,
                ])
            }),
        ))
    }

    pub fn matmul(&self, other: &Variable) -> Result<Variable> {
        let (a, b) = (self.data(), other.data());
        let out = a.matmul(&b)?;
        Ok(record(
            OpKind::MatMul,
            &[self, other],
            out,
            Box::new(move |g, needs| {
                Ok(vec![
                    needs[0].then(|| g.matmul(&b.transpose(0, 1)?)).transpose()?,
                    needs[1].then(|| a.transpose(0, 1)?.matmul(g)).transpose()?,
                ])
            }),
        ))
    }

    pub fn relu(&self) -> Result<Variable> {
        let x = self.data();
        let out = x.relu()?;
        Ok(record(
            OpKind::Relu,
            &[self],
            out,
            Box::new(move |g, _| Ok(vec![Some(g.mul(&x.relu_mask()?)?)])),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Variable> {
        let x = self.data();
        let out = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(record(
            OpKind::Reshape,
            &[self],
            out,
            Box::new(move |g, _| Ok(vec![Some(g.reshape(&orig)?)])),
        ))
    }

    /// Swaps axes `a` and `b`. The result is a view.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Variable> {
        let out = self.data().transpose(a, b)?;
        Ok(record(
            OpKind::Transpose,
            &[self],
            out,
            Box::new(move |g, _| Ok(vec![Some(g.transpose(a, b)?)])),
        ))
    }

    /// Sum of every element, as a rank-0 value.
    pub fn sum(&self) -> Result<Variable> {
        let x = self.data();
        let out = x.sum_all()?;
        let shape = x.shape().to_vec();
        Ok(record(
            OpKind::Sum,
            &[self],
            out,
            Box::new(move |g, _| Ok(vec![Some(g.broadcast_to(&shape)?.to_contiguous()?)])),
        ))
    }
}

/// Cross-correlation of `x [B,C,H,W]` with `weight [O,C,kH,kW]` plus an
/// optional per-channel bias.
pub fn conv2d(x: &Variable, weight: &Variable, bias: Option<&Variable>, geom: ConvGeometry) -> Result<Variable> {
    let (xd, wd) = (x.data(), weight.data());
    let bd = bias.map(Variable::data);
    let out = tensor::conv2d(&xd, &wd, bd.as_ref(), geom)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    let has_bias = bias.is_some();
    Ok(record(
        OpKind::Conv2d,
        &inputs,
        out,
        Box::new(move |g, needs| {
            let grads = tensor::conv2d_backward(&xd, &wd, g, geom)?;
            let mut out = vec![needs[0].then_some(grads.input), needs[1].then_some(grads.weight)];
            if has_bias {
                out.push(needs[2].then_some(grads.bias));
            }
            Ok(out)
        }),
    ))
}

/// `x [B,in] · weightᵀ + bias`, with `weight [out,in]` and `bias [out]`.
pub fn linear(x: &Variable, weight: &Variable, bias: &Variable) -> Result<Variable> {
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let (xs, ws) = (xd.shape(), wd.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bd.shape() != [ws[0]] {
        return Err(Error::shape("linear", xs, ws));
    }
    let out = xd.matmul(&wd.transpose(0, 1)?)?.add(&bd)?;
    Ok(record(
        OpKind::Linear,
        &[x, weight, bias],
        out,
        Box::new(move |g, needs| {
            Ok(vec![
                needs[0].then(|| g.matmul(&wd)).transpose()?,
                needs[1].then(|| g.transpose(0, 1)?.matmul(&xd)).transpose()?,
                needs[2].then(|| g.sum_axis(0, false)).transpose()?,
            ])
        }),
    ))
}

/// Batch-mean cross-entropy of `logits [B,C]` against integer `labels [B]`.
pub fn softmax_cross_entropy(logits: &Variable, labels: &Tensor) -> Result<Variable> {
    let ld = logits.data();
    let (loss, probs) = softmax_cross_entropy_kernel(&ld, labels)?;
    let (batch, classes) = (ld.shape()[0], ld.shape()[1]);
    let labels = labels.to_vec::<i32>()?;
    let out = ld.sibling_f32(vec![loss], Vec::new());
    Ok(record(
        OpKind::SoftmaxCrossEntropy,
        &[logits],
        out,
        Box::new(move |g, _| {
            if g.dtype() != DType::F32 {
                return Err(Error::DTypeMismatch {
                    expected: DType::F32,
                    found: g.dtype(),
                });
            }
            let scale = g.item()? / batch as f32;
            let mut grad = probs.clone();
            for (row, &label) in grad.chunks_exact_mut(classes).zip(&labels) {
                row[label as usize] -= 1.0;
            }
            grad.iter_mut().for_each(|v| *v *= scale);
            Ok(vec![Some(g.sibling_f32(grad, vec![batch, classes]))])
        }),
    ))
}
