use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use tidygrad::data::{
    batch_indices, load_idx, parse_idx_images, parse_idx_labels, permutation, synth_dataset, BatchIterator, Dataset, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
};
use tidygrad::{Error, IdxError, Tensor};

/// Writes IDX files byte by byte from the format description.
fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: u32, cols: u32) {
    let mut out = Vec::new();
    for word in [IDX_IMAGES_MAGIC, images.len() as u32, rows, cols] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    std::fs::write(path, out).unwrap();
}

fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).unwrap();
}

fn fixture(dir: &Path, labels: &[u8]) -> (PathBuf, PathBuf) {
    let images: Vec<Vec<u8>> = (0..4u8)
        .map(|k| (0..28 * 28).map(|p| (p as u8).wrapping_mul(k + 1)).collect())
        .collect();
    let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
    write_idx_images(&ip, &images, 28, 28);
    write_idx_labels(&lp, labels);
    (ip, lp)
}

#[test]
fn idx_fixture_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = fixture(dir.path(), &[3, 0, 1, 2]);
    let ds = load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.images().shape(), [4, 1, 28, 28]);
    assert_eq!(ds.sample_shape(), [1, 28, 28]);
    assert_eq!(ds.classes(), 4);
    assert_eq!(ds.labels().to_vec::<i32>().unwrap(), [3, 0, 1, 2]);
    let pixels = ds.images().to_vec::<u8>().unwrap();
    assert_eq!(pixels[28 * 28 * 2 + 5], 15);
}

#[test]
fn idx_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = fixture(dir.path(), &[0, 1, 2]);
    assert!(matches!(
        load_idx(&ip, &lp),
        Err(Error::Idx(IdxError::CountMismatch { images: 4, labels: 3 }))
    ));

    let bytes = std::fs::read(&ip).unwrap();
    assert!(matches!(
        parse_idx_images(&bytes[..bytes.len() - 1]),
        Err(IdxError::TruncatedInput { .. })
    ));
    assert!(matches!(parse_idx_images(&bytes[..10]), Err(IdxError::TruncatedInput { .. })));
    std::fs::write(&ip, &bytes[..100]).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::Idx(IdxError::TruncatedInput { .. }))));

    // Image file offered as labels.
    assert!(matches!(
        parse_idx_labels(&bytes),
        Err(IdxError::BadMagic { found: IDX_IMAGES_MAGIC, expected: IDX_LABELS_MAGIC })
    ));
    assert!(matches!(
        load_idx(dir.path().join("missing"), &lp),
        Err(Error::Idx(IdxError::Io(_)))
    ));
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let a = synth_dataset(100, 10, [1, 6, 6], 9).unwrap();
    let b = synth_dataset(100, 10, [1, 6, 6], 9).unwrap();
    assert_eq!(a.images().to_vec::<u8>().unwrap(), b.images().to_vec::<u8>().unwrap());
    assert_eq!(a.labels().to_vec::<i32>().unwrap(), b.labels().to_vec::<i32>().unwrap());
    let c = synth_dataset(100, 10, [1, 6, 6], 10).unwrap();
    assert_ne!(a.images().to_vec::<u8>().unwrap(), c.images().to_vec::<u8>().unwrap());

    let mut counts = [0; 10];
    for l in a.labels().to_vec::<i32>().unwrap() {
        counts[l as usize] += 1;
    }
    assert_eq!(counts, [10; 10]);
    assert!(matches!(synth_dataset(101, 10, [1, 6, 6], 0), Err(Error::InvalidConfig(_))));
    assert!(synth_dataset(10, 10, [1, 0, 6], 0).is_err());
}

#[test]
fn dataset_validates_labels_and_shapes() {
    let images = Tensor::from_vec(vec![0u8; 8], &[2, 1, 2, 2]).unwrap();
    let labels = Tensor::from_vec(vec![0i32, 3], &[2]).unwrap();
    assert!(matches!(
        Dataset::new(images.clone(), labels, 3),
        Err(Error::LabelOutOfRange { label: 3, classes: 3 })
    ));
    let short = Tensor::from_vec(vec![0i32], &[1]).unwrap();
    assert!(matches!(Dataset::new(images, short, 3), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn dataset_save_load() {
    let ds = synth_dataset(20, 4, [2, 3, 3], 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.dmlt");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.classes(), 4);
    assert_eq!(back.images().shape(), ds.images().shape());
    assert_eq!(back.images().to_vec::<u8>().unwrap(), ds.images().to_vec::<u8>().unwrap());
    assert_eq!(back.labels().to_vec::<i32>().unwrap(), ds.labels().to_vec::<i32>().unwrap());
}

#[test]
fn full_batch_is_a_permutation() {
    let ds = synth_dataset(30, 3, [1, 2, 2], 0).unwrap();
    let mut it = BatchIterator::new(&ds, 30, 5).unwrap();
    assert_eq!(it.batches_per_epoch(), 1);
    let mut idx = it.next_indices().unwrap();
    idx.sort_unstable();
    assert_eq!(idx, (0..30).collect::<Vec<_>>());
    assert!(it.next_indices().is_none());
    assert_eq!(it.epoch(), 1);
    assert!(BatchIterator::new(&ds, 31, 5).is_err());
    assert!(BatchIterator::new(&ds, 0, 5).is_err());
}

#[test]
fn next_batch_gathers_and_normalizes() {
    let ds = synth_dataset(12, 3, [1, 2, 2], 0).unwrap();
    let mut a = BatchIterator::new(&ds, 4, 8).unwrap();
    let mut b = BatchIterator::new(&ds, 4, 8).unwrap();
    let idx = b.next_indices().unwrap();
    let (images, labels) = a.next_batch().unwrap().unwrap();
    assert_eq!(images.shape(), [4, 1, 2, 2]);
    assert_eq!(images.dtype(), tidygrad::DType::F32);
    let raw = ds.images().to_vec::<u8>().unwrap();
    let want: Vec<f32> = idx
        .iter()
        .flat_map(|&i| raw[i * 4..i * 4 + 4].iter().map(|&p| p as f32 / 255.0))
        .collect();
    assert_eq!(images.to_vec::<f32>().unwrap(), want);
    let all = ds.labels().to_vec::<i32>().unwrap();
    assert_eq!(labels.to_vec::<i32>().unwrap(), idx.iter().map(|&i| all[i]).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn epoch_covers_permutation_prefix(classes in 2usize..5, per in 1usize..12, batch_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let n = classes * per;
        let batch = 1 + ((n - 1) as f64 * batch_frac) as usize;
        let ds = synth_dataset(n, classes, [1, 1, 2], 0).unwrap();
        let mut it = BatchIterator::new(&ds, batch, seed).unwrap();
        let mut seen = Vec::new();
        let mut batches = 0;
        while let Some(idx) = it.next_indices() {
            prop_assert_eq!(idx.len(), batch);
            seen.extend(idx);
            batches += 1;
        }
        prop_assert_eq!(batches, n / batch);
        let perm = permutation(seed, 0, n);
        let kept = n / batch * batch;
        prop_assert_eq!(&seen, &perm[..kept].to_vec());
        let distinct: BTreeSet<_> = seen.iter().collect();
        prop_assert_eq!(distinct.len(), kept);
    }

    #[test]
    fn iterator_agrees_with_stateless_indices(n in 2usize..40, batch in 1usize..10, seed in any::<u64>()) {
        prop_assume!(batch <= n);
        let ds = synth_dataset(n * 2, 2, [1, 1, 1], 0).unwrap();
        let n = ds.len();
        let mut it = BatchIterator::new(&ds, batch, seed).unwrap();
        let mut step = 0u64;
        for _ in 0..3 {
            while let Some(idx) = it.next_indices() {
                prop_assert_eq!(idx, batch_indices(seed, n, batch, step).unwrap());
                step += 1;
            }
        }
    }

    #[test]
    fn normalized_values_stay_in_unit_interval(seed in any::<u64>()) {
        let ds = synth_dataset(20, 10, [3, 4, 4], seed).unwrap();
        let mut it = BatchIterator::new(&ds, 7, seed).unwrap();
        while let Some((images, _)) = it.next_batch().unwrap() {
            prop_assert!(images.to_vec::<f32>().unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
