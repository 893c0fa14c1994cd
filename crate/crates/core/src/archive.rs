//! Single-blob encoding of an ordered, named tensor collection.
//!
//! Layout, all integers little-endian, no padding:
//!
//! ```text
//! "DMLT" | version u32 = 1 | count u32
//! per entry: name_len u32 | name (UTF-8) | dtype u8 | ndim u8 | shape u32 × ndim | payload
//! ```
//!
//! Dtype codes are 0 = f32, 1 = i32, 2 = u8, 3 = bool. Payloads are row-major.
//! The same bytes are used on the wire and in `.dmlt` files.

use std::collections::HashSet;
use std::path::Path;

use crate::backend::{Backend, BufferId, Retain};
use crate::dtype::{DType, Storage};
use crate::error::{ArchiveError, Error, Result};
use crate::nn::Layer;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DMLT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Default)]
pub struct TensorArchive {
    entries: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(ArchiveError::DuplicateName(name).into());
        }
        if name.len() > u32::MAX as usize || tensor.rank() > u8::MAX as usize {
            return Err(Error::shape("archive entry", tensor.shape(), &[]));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }

    /// Exact encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .entries
                .iter()
                .map(|(n, t)| entry_len(n.len(), t.rank(), t.dtype(), t.numel()))
                .sum::<usize>()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Appends the encoding to `out`.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype().code());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::shape("archive entry", t.shape(), &[]))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            write_payload(t, out)?;
        }
        Ok(())
    }

    /// Decodes onto this thread's current backend.
    pub fn decode(bytes: &[u8]) -> Result<TensorArchive> {
        Self::decode_in(&Backend::current(), bytes)
    }

    pub fn decode_in(backend: &Backend, bytes: &[u8]) -> Result<TensorArchive> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("took 4 bytes");
        if magic != MAGIC {
            return Err(ArchiveError::BadMagic(magic).into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ArchiveError::UnsupportedVersion(version).into());
        }
        let count = r.u32()?;
        let mut names = HashSet::new();
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ArchiveError::InvalidName)?
                .to_string();
            if !names.insert(name.clone()) {
                return Err(ArchiveError::DuplicateName(name).into());
            }
            let code = r.u8()?;
            let dtype = DType::from_code(code).ok_or(ArchiveError::InvalidDType(code))?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            // Checked so a hostile header cannot overflow the size or stride
            // computations. Zero extents are skipped because strides span the
            // other dimensions even when the tensor is empty.
            let strides_fit = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d.max(1))).is_some();
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size_in_bytes()).map(|b| (n, b)))
                .filter(|_| strides_fit);
            let Some((numel, nbytes)) = numel else {
                return Err(ArchiveError::TruncatedInput {
                    at: r.pos,
                    needed: usize::MAX,
                }
                .into());
            };
            let storage = read_payload(dtype, numel, r.take(nbytes)?)?;
            let tensor = Tensor::from_storage_in(backend, storage, shape);
            entries.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(ArchiveError::TrailingGarbage(bytes.len() - r.pos).into());
        }
        Ok(TensorArchive { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TensorArchive> {
        Self::decode(&std::fs::read(path)?)
    }
}

impl Retain for TensorArchive {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        for (_, t) in &self.entries {
            t.collect_buffers(out);
        }
    }
}

/// Encoded size of one entry.
pub fn entry_len(name_len: usize, ndim: usize, dtype: DType, numel: usize) -> usize {
    4 + name_len + 2 + 4 * ndim + dtype.size_in_bytes() * numel
}

fn write_payload(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    match t.dtype() {
        DType::F32 => t.with_slice(|s: &[f32]| s.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()))),
        DType::I32 => t.with_slice(|s: &[i32]| s.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()))),
        DType::U8 => t.with_slice(|s: &[u8]| out.extend_from_slice(s)),
        DType::Bool => t.with_slice(|s: &[bool]| out.extend(s.iter().map(|&b| b as u8))),
    }
}

fn read_payload(dtype: DType, numel: usize, bytes: &[u8]) -> Result<Storage> {
    Ok(match dtype {
        DType::F32 => Storage::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect(),
        ),
        DType::I32 => Storage::I32(
            bytes
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect(),
        ),
        DType::U8 => Storage::U8(bytes.to_vec()),
        DType::Bool => {
            let mut v = Vec::with_capacity(numel);
            for &b in bytes {
                match b {
                    0 => v.push(false),
                    1 => v.push(true),
                    _ => return Err(ArchiveError::InvalidBool(b).into()),
                }
            }
            Storage::Bool(v)
        }
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(ArchiveError::TruncatedInput {
                at: self.pos,
                needed: n - remaining,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("took 4 bytes")))
    }
}

/// Parameters of `model` in enumeration order.
pub fn archive_model(model: &dyn Layer) -> Result<TensorArchive> {
    let mut archive = TensorArchive::new();
    for (name, p) in model.parameters() {
        archive.push(name, p.data())?;
    }
    Ok(archive)
}

/// Gradients of `model`'s parameters in enumeration order.
pub fn archive_gradients(model: &dyn Layer) -> Result<TensorArchive> {
    let mut archive = TensorArchive::new();
    for (name, p) in model.parameters() {
        let g = p.grad().ok_or_else(|| Error::MissingGradient(name.clone()))?;
        archive.push(name, g)?;
    }
    Ok(archive)
}

/// Checks that `archive` holds exactly `model`'s parameter names with
/// matching shapes, and returns the tensors in enumeration order.
pub fn match_parameters(model: &dyn Layer, archive: &TensorArchive) -> Result<Vec<Tensor>> {
    let params = model.parameters();
    if let Some(extra) = archive.names().find(|n| !params.iter().any(|(p, _)| p == n)) {
        return Err(Error::NameMismatch(format!("unexpected entry {extra:?}")));
    }
    params
        .iter()
        .map(|(name, p)| {
            let t = archive
                .get(name)
                .ok_or_else(|| Error::NameMismatch(format!("missing entry {name:?}")))?;
            let data = p.data();
            if t.shape() != data.shape() || t.dtype() != data.dtype() {
                return Err(Error::shape("restore_model", data.shape(), t.shape()));
            }
            Ok(t.clone())
        })
        .collect()
}

/// Overwrites parameter data in place from `archive`.
pub fn restore_model(model: &dyn Layer, archive: &TensorArchive) -> Result<()> {
    let tensors = match_parameters(model, archive)?;
    for ((_, p), t) in model.parameters().iter().zip(&tensors) {
        p.data().copy_from(t)?;
    }
    Ok(())
}
