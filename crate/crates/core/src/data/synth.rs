use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LOW: i32 = 64;
const HIGH: i32 = 192;
const NOISE: i32 = 48;

/// Class-conditional images: each class has a random two-level prototype
/// (every pixel 64 or 192) and samples add uniform noise in ±48. Samples
/// cycle through classes, so sample `i` has label `i % classes`.
pub fn synth_dataset(n: usize, classes: usize, shape: [usize; 3], seed: u64) -> Result<Dataset> {
    if classes < 2 || n == 0 || !n.is_multiple_of(classes) {
        return Err(Error::InvalidConfig(format!(
            "{n} samples cannot be split evenly over {classes} classes"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidConfig("sample shape extents must be positive".into()));
    }
    let per: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<i32>> = (0..classes)
        .map(|_| (0..per).map(|_| if rng.gen::<bool>() { HIGH } else { LOW }).collect())
        .collect();
    let mut images = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        for &p in &prototypes[k] {
            images.push((p + rng.gen_range(-NOISE..=NOISE)).clamp(0, 255) as u8);
        }
        labels.push(k as i32);
    }
    let [c, h, w] = shape;
    Dataset::new(
        Tensor::from_vec(images, &[n, c, h, w])?,
        Tensor::from_vec(labels, &[n])?,
        classes,
    )
}
