//! Dense strided tensors over tracked backend buffers.

mod conv;
mod kernels;
mod nested;
mod slice;

use std::sync::Arc;

pub use conv::{conv2d, conv2d_backward, Conv2dGrads, ConvGeometry};
pub use kernels::broadcast_shapes;
pub use nested::Nested;
pub use slice::{Selector, SliceSpec};

pub(crate) use kernels::softmax_cross_entropy as softmax_cross_entropy_kernel;

use crate::backend::{Backend, Buffer, BufferId, Retain};
use crate::dtype::{DType, Element, Storage};
use crate::error::{Error, Result};

/// An n-dimensional array view over a backend buffer.
///
/// Cloning a tensor is cheap and shares the buffer. Views produced by
/// [`Tensor::slice`], [`Tensor::permute`] and [`Tensor::reshape`] never copy.
#[derive(Clone)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    strides: Vec<isize>,
    offset: usize,
    buffer: Arc<Buffer>,
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<isize> {
    let mut strides = vec![0isize; shape.len()];
    let mut acc = 1isize;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d.max(1) as isize;
    }
    strides
}

impl Tensor {
    pub(crate) fn from_storage_in(backend: &Backend, storage: Storage, shape: Vec<usize>) -> Tensor {
        debug_assert_eq!(storage.len(), shape.iter().product::<usize>());
        Tensor {
            dtype: storage.dtype(),
            strides: row_major_strides(&shape),
            shape,
            offset: 0,
            buffer: backend.alloc(storage),
        }
    }

    pub(crate) fn from_storage(storage: Storage, shape: Vec<usize>) -> Tensor {
        Self::from_storage_in(&Backend::current(), storage, shape)
    }

    /// A contiguous tensor on the same backend as `self`.
    pub(crate) fn sibling(&self, storage: Storage, shape: Vec<usize>) -> Tensor {
        Self::from_storage_in(self.buffer.backend(), storage, shape)
    }

    pub(crate) fn sibling_f32(&self, data: Vec<f32>, shape: Vec<usize>) -> Tensor {
        self.sibling(Storage::F32(data), shape)
    }

    pub fn from_vec<T: Element>(data: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        Self::from_vec_in(&Backend::current(), data, shape)
    }

    pub fn from_vec_in<T: Element>(backend: &Backend, data: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("from_vec", &[data.len()], shape));
        }
        Ok(Self::from_storage_in(backend, T::into_storage(data), shape.to_vec()))
    }

    pub fn zeros(dtype: DType, shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Self::from_storage(Storage::zeros(dtype, numel), shape.to_vec())
    }

    pub fn zeros_like(&self) -> Tensor {
        self.sibling(Storage::zeros(self.dtype, self.numel()), self.shape.clone())
    }

    pub fn full(value: f32, shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Self::from_storage(Storage::F32(vec![value; numel]), shape.to_vec())
    }

    pub fn scalar(value: f32) -> Tensor {
        Self::from_storage(Storage::F32(vec![value]), Vec::new())
    }

    /// Builds a contiguous tensor from nested lists, casting every value to
    /// `dtype`. Values the dtype cannot represent are rejected.
    pub fn from_nested(data: &Nested, dtype: DType) -> Result<Tensor> {
        let (shape, values) = data.flatten()?;
        if let Some(&bad) = values.iter().find(|&&v| !dtype.represents(v)) {
            return Err(Error::DTypeOverflow { value: bad, dtype });
        }
        let storage = match dtype {
            DType::F32 => Storage::F32(values.iter().map(|&v| v as f32).collect()),
            DType::I32 => Storage::I32(values.iter().map(|&v| v as i32).collect()),
            DType::U8 => Storage::U8(values.iter().map(|&v| v as u8).collect()),
            DType::Bool => Storage::Bool(values.iter().map(|&v| v != 0.0).collect()),
        };
        Ok(Self::from_storage(storage, shape))
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[isize] {
        &self.strides
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn buffer(&self) -> &Arc<Buffer> {
        &self.buffer
    }

    pub fn buffer_id(&self) -> BufferId {
        self.buffer.id()
    }

    pub fn backend(&self) -> &Backend {
        self.buffer.backend()
    }

    pub fn is_released(&self) -> bool {
        self.buffer.is_released()
    }

    /// Releases the underlying buffer now. Every view of it becomes unusable.
    pub fn dispose(&self) {
        self.backend().release(&self.buffer);
    }

    /// Row-major layout, ignoring extent-1 axes.
    fn has_row_major_strides(&self) -> bool {
        let mut expected = 1isize;
        for (&d, &s) in self.shape.iter().zip(&self.strides).rev() {
            if d != 1 && s != expected {
                return false;
            }
            expected *= d as isize;
        }
        true
    }

    /// True when the tensor covers its whole buffer in row-major order.
    pub fn is_contiguous(&self) -> bool {
        self.offset == 0 && self.buffer.len() == self.numel() && self.has_row_major_strides()
    }

    /// Flat buffer offsets of every element in row-major index order.
    pub(crate) fn element_offsets(&self) -> StridedOffsets {
        StridedOffsets::new(&self.shape, &self.strides, self.offset)
    }

    /// Returns `self` when already contiguous, otherwise a fresh copy.
    pub fn to_contiguous(&self) -> Result<Tensor> {
        if self.is_contiguous() {
            // Surface use-after-release even on the no-copy path.
            self.buffer.with_storage(|_| ())?;
            return Ok(self.clone());
        }
        let storage = self.buffer.with_storage(|s| s.gather(self.element_offsets()))?;
        Ok(self.sibling(storage, self.shape.clone()))
    }

    /// Runs `f` over the contiguous row-major elements.
    pub fn with_slice<T: Element, R>(&self, f: impl FnOnce(&[T]) -> R) -> Result<R> {
        if self.dtype != T::DTYPE {
            return Err(Error::DTypeMismatch {
                expected: T::DTYPE,
                found: self.dtype,
            });
        }
        if self.is_contiguous() {
            return self
                .buffer
                .with_storage(|s| f(T::slice(s).expect("dtype checked above")));
        }
        // Strided views are gathered into host memory, not a tracked buffer.
        let gathered = self.buffer.with_storage(|s| {
            let v = T::slice(s).expect("dtype checked above");
            self.element_offsets().map(|o| v[o]).collect::<Vec<T>>()
        })?;
        Ok(f(&gathered))
    }

    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        self.with_slice(|s: &[T]| s.to_vec())
    }

    pub fn to_f64_vec(&self) -> Result<Vec<f64>> {
        let offsets = self.element_offsets();
        self.buffer.with_storage(|s| match s {
            Storage::F32(v) => offsets.map(|o| v[o].to_f64()).collect(),
            Storage::I32(v) => offsets.map(|o| v[o].to_f64()).collect(),
            Storage::U8(v) => offsets.map(|o| v[o].to_f64()).collect(),
            Storage::Bool(v) => offsets.map(|o| v[o].to_f64()).collect(),
        })
    }

    /// The single value of a one-element float tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::shape("item", &self.shape, &[1]));
        }
        Ok(self.to_vec::<f32>()?[0])
    }

    /// Overwrites the elements of a contiguous float tensor in place. This is
    /// the only mutation path and is reserved for optimizer updates and
    /// parameter restores.
    pub fn update_in_place(&self, f: impl FnOnce(&mut [f32])) -> Result<()> {
        if self.dtype != DType::F32 {
            return Err(Error::DTypeMismatch {
                expected: DType::F32,
                found: self.dtype,
            });
        }
        if !self.is_contiguous() {
            return Err(Error::shape("update_in_place", &self.shape, &[self.buffer.len()]));
        }
        self.buffer
            .with_storage_mut(|s| f(f32::slice_mut(s).expect("dtype checked above")))
    }

    /// Copies `src` into this contiguous tensor in place.
    pub fn copy_from(&self, src: &Tensor) -> Result<()> {
        if src.shape != self.shape {
            return Err(Error::shape("copy_from", &self.shape, &src.shape));
        }
        let data = src.to_vec::<f32>()?;
        self.update_in_place(|dst| dst.copy_from_slice(&data))
    }

    /// Copies this tensor into another backend.
    pub fn to_backend(&self, backend: &Backend) -> Result<Tensor> {
        let storage = self.buffer.with_storage(|s| s.gather(self.element_offsets()))?;
        Ok(Self::from_storage_in(backend, storage, self.shape.clone()))
    }

    pub fn cast(&self, dtype: DType) -> Result<Tensor> {
        if dtype == self.dtype {
            return self.to_contiguous();
        }
        let values = self.to_f64_vec()?;
        if let Some(&bad) = values.iter().find(|&&v| !dtype.represents(v)) {
            return Err(Error::DTypeOverflow { value: bad, dtype });
        }
        let storage = match dtype {
            DType::F32 => Storage::F32(values.iter().map(|&v| v as f32).collect()),
            DType::I32 => Storage::I32(values.iter().map(|&v| v as i32).collect()),
            DType::U8 => Storage::U8(values.iter().map(|&v| v as u8).collect()),
            DType::Bool => Storage::Bool(values.iter().map(|&v| v != 0.0).collect()),
        };
        Ok(self.sibling(storage, self.shape.clone()))
    }

    fn view(&self, shape: Vec<usize>, strides: Vec<isize>, offset: usize) -> Tensor {
        Tensor {
            dtype: self.dtype,
            shape,
            strides,
            offset,
            buffer: self.buffer.clone(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        let base = if self.has_row_major_strides() {
            self.clone()
        } else {
            self.to_contiguous()?
        };
        Ok(base.view(shape.to_vec(), row_major_strides(shape), base.offset))
    }

    /// Reorders axes; `axes` must be a permutation of `0..rank`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(Error::shape("permute", &self.shape, axes));
        }
        for &a in axes {
            if a >= rank || std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidAxis { axis: a, rank });
            }
        }
        let shape = axes.iter().map(|&a| self.shape[a]).collect();
        let strides = axes.iter().map(|&a| self.strides[a]).collect();
        Ok(self.view(shape, strides, self.offset))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let rank = self.rank();
        for axis in [a, b] {
            if axis >= rank {
                return Err(Error::InvalidAxis { axis, rank });
            }
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Stride-0 view repeating this tensor to `shape` under trailing-axis
    /// broadcasting rules.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.len() < self.rank() {
            return Err(Error::shape("broadcast_to", &self.shape, shape));
        }
        let lead = shape.len() - self.rank();
        let mut strides = vec![0isize; shape.len()];
        for (i, (&d, &s)) in self.shape.iter().zip(&self.strides).enumerate() {
            let target = shape[lead + i];
            if d == target {
                strides[lead + i] = s;
            } else if d != 1 {
                return Err(Error::shape("broadcast_to", &self.shape, shape));
            }
        }
        Ok(self.view(shape.to_vec(), strides, self.offset))
    }

    /// Applies a slice spec, returning a view that shares the buffer.
    pub fn slice(&self, spec: &SliceSpec) -> Result<Tensor> {
        let (shape, strides, offset) = spec.apply(&self.shape, &self.strides, self.offset)?;
        Ok(self.view(shape, strides, offset))
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("dtype", &self.dtype)
            .field("shape", &self.shape)
            .field("buffer", &self.buffer.id());
        if self.numel() <= 16 {
            if let Ok(v) = self.to_f64_vec() {
                d.field("data", &v);
            }
        }
        d.finish()
    }
}

impl Retain for Tensor {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        out.push(self.buffer.id());
    }
}

/// Row-major walk over the flat offsets addressed by a strided view.
pub(crate) struct StridedOffsets {
    shape: Vec<usize>,
    strides: Vec<isize>,
    index: Vec<usize>,
    current: isize,
    remaining: usize,
}

impl StridedOffsets {
    fn new(shape: &[usize], strides: &[isize], offset: usize) -> Self {
        StridedOffsets {
            shape: shape.to_vec(),
            strides: strides.to_vec(),
            index: vec![0; shape.len()],
            current: offset as isize,
            remaining: shape.iter().product(),
        }
    }
}

impl Iterator for StridedOffsets {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let out = self.current as usize;
        for axis in (0..self.shape.len()).rev() {
            self.index[axis] += 1;
            self.current += self.strides[axis];
            if self.index[axis] < self.shape[axis] {
                break;
            }
            self.current -= self.strides[axis] * self.shape[axis] as isize;
            self.index[axis] = 0;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for StridedOffsets {}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: Vec<f32>, shape: &[usize]) -> Tensor {
        Tensor::from_vec(data, shape).unwrap()
    }

    #[test]
    fn fresh_tensors_are_row_major() {
        let x = Tensor::zeros(DType::F32, &[2, 3, 4]);
        assert_eq!(x.strides(), &[12, 4, 1]);
        assert!(x.is_contiguous());
    }

    #[test]
    fn from_nested_matrix() {
        let x = Tensor::from_nested(&Nested::from(vec![vec![1.0, 2.0], vec![3.0, 4.0]]), DType::F32)
            .unwrap();
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(x.to_vec::<f32>().unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn from_nested_empty() {
        let x = Tensor::from_nested(&Nested::List(vec![]), DType::F32).unwrap();
        assert_eq!(x.shape(), &[0]);
        assert!(x.to_vec::<f32>().unwrap().is_empty());
    }

    #[test]
    fn from_nested_ragged() {
        let n = Nested::from(vec![vec![1.0, 2.0], vec![3.0]]);
        assert!(matches!(
            Tensor::from_nested(&n, DType::F32),
            Err(Error::RaggedInput { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn from_nested_overflow_rejected() {
        let n = Nested::from(vec![1.0, 300.0]);
        assert!(matches!(
            Tensor::from_nested(&n, DType::U8),
            Err(Error::DTypeOverflow { dtype: DType::U8, .. })
        ));
        let ok = Tensor::from_nested(&n, DType::I32).unwrap();
        assert_eq!(ok.to_vec::<i32>().unwrap(), vec![1, 300]);
    }

    #[test]
    fn contiguous_is_identity() {
        let x = t(vec![1.0, 2.0, 3.0], &[3]);
        let y = x.to_contiguous().unwrap();
        assert_eq!(x.buffer_id(), y.buffer_id());
    }

    #[test]
    fn reversed_view_materializes() {
        let x = t(vec![1.0, 2.0, 3.0], &[3]);
        let r = x.slice(&SliceSpec::new(vec![Selector::rev()])).unwrap();
        let c = r.to_contiguous().unwrap();
        assert_ne!(c.buffer_id(), x.buffer_id());
        assert_eq!(c.to_vec::<f32>().unwrap(), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn column_view_materializes_two_elements() {
        let x = t(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let col = x
            .slice(&SliceSpec::new(vec![Selector::full(), Selector::Index(1)]))
            .unwrap();
        let c = col.to_contiguous().unwrap();
        assert_ne!(c.buffer_id(), x.buffer_id());
        assert_eq!(c.buffer().len(), 2);
        assert_eq!(c.to_vec::<f32>().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn released_tensor_errors() {
        let x = t(vec![1.0], &[1]);
        x.dispose();
        assert!(matches!(x.to_vec::<f32>(), Err(Error::UseAfterRelease(_))));
        assert!(matches!(x.to_contiguous(), Err(Error::UseAfterRelease(_))));
    }

    #[test]
    fn permute_and_reshape() {
        let x = t((0..6).map(|v| v as f32).collect(), &[2, 3]);
        let xt = x.transpose(0, 1).unwrap();
        assert_eq!(xt.shape(), &[3, 2]);
        assert_eq!(xt.to_vec::<f32>().unwrap(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let r = xt.reshape(&[6]).unwrap();
        assert_eq!(r.to_vec::<f32>().unwrap(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.reshape(&[4]).is_err());
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn in_place_update_requires_contiguous() {
        let x = t(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        x.update_in_place(|v| v[0] = 9.0).unwrap();
        assert_eq!(x.to_vec::<f32>().unwrap()[0], 9.0);
        assert!(x.transpose(0, 1).unwrap().update_in_place(|_| ()).is_err());
    }

    #[test]
    fn cast_checks_range() {
        let x = t(vec![1.0, 2.5], &[2]);
        assert!(x.cast(DType::I32).is_err());
        let y = t(vec![1.0, 255.0], &[2]).cast(DType::U8).unwrap();
        assert_eq!(y.to_vec::<u8>().unwrap(), vec![1, 255]);
    }
}
