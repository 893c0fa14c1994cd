//! 2-D cross-correlation via per-sample im2col + gemm.
//!
//! Each sample is processed independently so a sample's output does not depend
//! on which other samples share its batch.

use super::kernels::{gemm, gemm_into};
use super::Tensor;
use crate::dtype::DType;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: 1,
            padding: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    batch: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Dims {
    fn resolve(x: &Tensor, weight: &Tensor, geom: ConvGeometry) -> Result<Dims> {
        for t in [x, weight] {
            if t.dtype() != DType::F32 {
                return Err(Error::DTypeMismatch {
                    expected: DType::F32,
                    found: t.dtype(),
                });
            }
        }
        let (xs, ws) = (x.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || geom.stride == 0 {
            return Err(Error::shape("conv2d", xs, ws));
        }
        let (h, w, kh, kw, p) = (xs[2], xs[3], ws[2], ws[3], geom.padding);
        if h + 2 * p < kh || w + 2 * p < kw {
            return Err(Error::shape("conv2d", xs, ws));
        }
        Ok(Dims {
            batch: xs[0],
            in_c: xs[1],
            h,
            w,
            out_c: ws[0],
            kh,
            kw,
            oh: (h + 2 * p - kh) / geom.stride + 1,
            ow: (w + 2 * p - kw) / geom.stride + 1,
            stride: geom.stride,
            pad: p,
        })
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn spatial_out(&self) -> usize {
        self.oh * self.ow
    }

    fn sample_in(&self) -> usize {
        self.in_c * self.h * self.w
    }

    /// Source pixel for patch row `(c, i, j)` at output `(oy, ox)`, if inside
    /// the unpadded image.
    fn source(&self, c: usize, i: usize, j: usize, oy: usize, ox: usize) -> Option<usize> {
        let y = (oy * self.stride + i).checked_sub(self.pad)?;
        let x = (ox * self.stride + j).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then(|| (c * self.h + y) * self.w + x)
    }

    /// `[patch, L]` column matrix for one sample.
    fn im2col(&self, sample: &[f32], cols: &mut [f32]) {
        let l = self.spatial_out();
        for c in 0..self.in_c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * l;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            cols[row + oy * self.ow + ox] =
                                self.source(c, i, j, oy, ox).map_or(0.0, |s| sample[s]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a `[patch, L]` column gradient back onto one sample.
    fn col2im(&self, cols: &[f32], sample: &mut [f32]) {
        let l = self.spatial_out();
        for c in 0..self.in_c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * l;
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some(s) = self.source(c, i, j, oy, ox) {
                                sample[s] += cols[row + oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// `x [B,C,H,W]` ⋆ `weight [O,C,kH,kW]` (+ `bias [O]`) → `[B,O,OH,OW]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: ConvGeometry) -> Result<Tensor> {
    let d = Dims::resolve(x, weight, geom)?;
    let bias = match bias {
        Some(b) if b.shape() != [d.out_c] => return Err(Error::shape("conv2d bias", b.shape(), &[d.out_c])),
        Some(b) => Some(b.to_vec::<f32>()?),
        None => None,
    };
    let (l, patch) = (d.spatial_out(), d.patch());
    let out = x.with_slice(|xs: &[f32]| {
        weight.with_slice(|ws: &[f32]| {
            let mut out = Vec::with_capacity(d.batch * d.out_c * l);
            let mut cols = vec![0.0; patch * l];
            for sample in xs.chunks_exact(d.sample_in().max(1)).take(d.batch) {
                d.im2col(sample, &mut cols);
                let mut y = gemm(ws, &cols, d.out_c, patch, l);
                if let Some(b) = &bias {
                    for (row, &bv) in y.chunks_exact_mut(l.max(1)).zip(b) {
                        row.iter_mut().for_each(|v| *v += bv);
                    }
                }
                out.extend(y);
            }
            out
        })
    })??;
    Ok(x.sibling_f32(out, vec![d.batch, d.out_c, d.oh, d.ow]))
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`] with respect to input, weight and bias given the
/// upstream gradient `grad_out [B,O,OH,OW]`.
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor, geom: ConvGeometry) -> Result<Conv2dGrads> {
    let d = Dims::resolve(x, weight, geom)?;
    let expect = [d.batch, d.out_c, d.oh, d.ow];
    if grad_out.shape() != expect {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &expect));
    }
    let (l, patch) = (d.spatial_out(), d.patch());
    let (dx, dw, db) = x.with_slice(|xs: &[f32]| {
        weight.with_slice(|ws: &[f32]| {
            grad_out.with_slice(|gs: &[f32]| {
                let wt = transpose(ws, d.out_c, patch);
                let mut dx = vec![0.0f32; xs.len()];
                let mut dw = vec![0.0f32; ws.len()];
                let mut db = vec![0.0f32; d.out_c];
                let mut cols = vec![0.0; patch * l];
                let per_out = d.out_c * l;
                for b in 0..d.batch {
                    let g = &gs[b * per_out..(b + 1) * per_out];
                    let sample = &xs[b * d.sample_in()..(b + 1) * d.sample_in()];
                    d.im2col(sample, &mut cols);
                    let cols_t = transpose(&cols, patch, l);
                    gemm_into(g, &cols_t, d.out_c, l, patch, &mut dw);
                    let dcols = gemm(&wt, g, patch, d.out_c, l);
                    d.col2im(&dcols, &mut dx[b * d.sample_in()..(b + 1) * d.sample_in()]);
                    for (acc, row) in db.iter_mut().zip(g.chunks_exact(l.max(1))) {
                        *acc = row.iter().fold(*acc, |a, &v| a + v);
                    }
                }
                (dx, dw, db)
            })
        })
    })???;
    Ok(Conv2dGrads {
        input: x.sibling_f32(dx, x.shape().to_vec()),
        weight: x.sibling_f32(dw, weight.shape().to_vec()),
        bias: x.sibling_f32(db, vec![d.out_c]),
    })
}
