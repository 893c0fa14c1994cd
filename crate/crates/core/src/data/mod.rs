//! Datasets and seeded batch iteration.

mod idx;
mod synth;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::synth_dataset;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::TensorArchive;
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `images` are `u8 [N, C, H, W]`, `labels` are `i32 [N]` in `[0, classes)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor,
    labels: Tensor,
    classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Tensor, classes: usize) -> Result<Dataset> {
        if images.dtype() != DType::U8 {
            return Err(Error::DTypeMismatch {
                expected: DType::U8,
                found: images.dtype(),
            });
        }
        if labels.dtype() != DType::I32 {
            return Err(Error::DTypeMismatch {
                expected: DType::I32,
                found: labels.dtype(),
            });
        }
        if images.rank() != 4 || labels.rank() != 1 || images.shape()[0] != labels.shape()[0] {
            return Err(Error::shape("dataset", images.shape(), labels.shape()));
        }
        if let Some(&bad) = labels.to_vec::<i32>()?.iter().find(|&&l| l < 0 || l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as i64,
                classes,
            });
        }
        Ok(Dataset {
            images: images.to_contiguous()?,
            labels: labels.to_contiguous()?,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    /// Raw `u8` images and `i32` labels for `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfBounds {
                index: bad as isize,
                axis: 0,
                extent: n,
            });
        }
        let per: usize = self.sample_shape().iter().product();
        let images = self.images.with_slice(|src: &[u8]| {
            let mut out = Vec::with_capacity(indices.len() * per);
            for &i in indices {
                out.extend_from_slice(&src[i * per..(i + 1) * per]);
            }
            out
        })?;
        let labels = self
            .labels
            .with_slice(|src: &[i32]| indices.iter().map(|&i| src[i]).collect::<Vec<_>>())?;
        let [c, h, w] = self.sample_shape();
        Ok((
            Tensor::from_vec(images, &[indices.len(), c, h, w])?,
            Tensor::from_vec(labels, &[indices.len()])?,
        ))
    }

    /// Stores images, labels and the class count as a `.dmlt` archive.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut archive = TensorArchive::new();
        archive.push("images", self.images.clone())?;
        archive.push("labels", self.labels.clone())?;
        archive.push("classes", Tensor::from_vec(vec![self.classes as i32], &[1])?)?;
        archive.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let archive = TensorArchive::load(path)?;
        let get = |name: &str| {
            archive
                .get(name)
                .cloned()
                .ok_or_else(|| Error::NameMismatch(format!("dataset archive lacks {name:?}")))
        };
        let classes = get("classes")?.to_vec::<i32>()?;
        let classes = match classes.as_slice() {
            [c] if *c > 0 => *c as usize,
            _ => return Err(Error::InvalidConfig("bad class count in dataset archive".into())),
        };
        Dataset::new(get("images")?, get("labels")?, classes)
    }
}

/// `u8` images to `f32` in `[0, 1]` by dividing by 255.
pub fn normalize(images: &Tensor) -> Result<Tensor> {
    let data = images.with_slice(|s: &[u8]| s.iter().map(|&v| v as f32 / 255.0).collect::<Vec<_>>())?;
    Tensor::from_vec(data, images.shape())
}

/// Seeded permutation of `0..n` for one epoch.
pub fn permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

fn batches_per_epoch(n: usize, batch: usize) -> Result<usize> {
    if batch == 0 || batch > n {
        return Err(Error::InvalidConfig(format!("batch size {batch} does not fit {n} samples")));
    }
    Ok(n / batch)
}

/// Sample indices of global step `step` when every epoch is a fresh seeded
/// permutation consumed in full batches, dropping the short tail.
pub fn batch_indices(seed: u64, n: usize, batch: usize, step: u64) -> Result<Vec<usize>> {
    let per_epoch = batches_per_epoch(n, batch)? as u64;
    let (epoch, pos) = (step / per_epoch, (step % per_epoch) as usize);
    Ok(permutation(seed, epoch, n)[pos * batch..(pos + 1) * batch].to_vec())
}

/// Walks a dataset in seeded-shuffle order, one full batch at a time.
#[derive(Debug)]
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    batch: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch: usize, seed: u64) -> Result<BatchIterator<'a>> {
        batches_per_epoch(dataset.len(), batch)?;
        Ok(BatchIterator {
            dataset,
            batch,
            seed,
            epoch: 0,
            perm: permutation(seed, 0, dataset.len()),
            cursor: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len() / self.batch
    }

    /// Indices of the next batch, or `None` at the end of the epoch. The call
    /// after `None` starts the next epoch.
    pub fn next_indices(&mut self) -> Option<Vec<usize>> {
        if self.cursor + self.batch > self.perm.len() {
            self.epoch += 1;
            self.perm = permutation(self.seed, self.epoch, self.dataset.len());
            self.cursor = 0;
            return None;
        }
        let out = self.perm[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        Some(out)
    }

    /// Normalized `f32` images and `i32` labels of the next batch.
    pub fn next_batch(&mut self) -> Result<Option<(Tensor, Tensor)>> {
        match self.next_indices() {
            Some(idx) => {
                let (images, labels) = self.dataset.gather(&idx)?;
                Ok(Some((normalize(&images)?, labels)))
            }
            None => Ok(None),
        }
    }
}
