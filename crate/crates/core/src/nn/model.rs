use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, Linear, Relu};
use super::{single_input, Layer};
use crate::autograd::Variable;
use crate::error::{Error, Result};
use crate::tensor::ConvGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    SmallCnn,
}

/// Everything needed to rebuild a model bit-for-bit in another process.
///
/// `widths` are the hidden sizes for `mlp` (one or more) and the two conv
/// channel counts for `small_cnn`. `input_shape` is `[C, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub widths: Vec<usize>,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub seed: u64,
}

const CNN_KERNEL: usize = 3;
const CNN_GEOMETRY: ConvGeometry = ConvGeometry { stride: 2, padding: 1 };

fn cnn_out(n: usize) -> usize {
    (n + 2 * CNN_GEOMETRY.padding - CNN_KERNEL) / CNN_GEOMETRY.stride + 1
}

impl ModelConfig {
    pub fn mlp(input_shape: [usize; 3], hidden: usize, classes: usize, seed: u64) -> Self {
        ModelConfig {
            arch: Arch::Mlp,
            widths: vec![hidden],
            input_shape,
            classes,
            seed,
        }
    }

    pub fn small_cnn(input_shape: [usize; 3], channels: [usize; 2], classes: usize, seed: u64) -> Self {
        ModelConfig {
            arch: Arch::SmallCnn,
            widths: channels.to_vec(),
            input_shape,
            classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.input_shape.contains(&0) {
            return bad("input shape extents must be positive");
        }
        if self.classes < 2 {
            return bad("at least two classes are required");
        }
        if self.widths.contains(&0) {
            return bad("layer widths must be positive");
        }
        match self.arch {
            Arch::Mlp if self.widths.is_empty() => bad("mlp needs at least one hidden width"),
            Arch::SmallCnn if self.widths.len() != 2 => bad("small_cnn needs exactly two channel widths"),
            _ => Ok(()),
        }
    }

    pub fn input_features(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Spatial size after both stride-2 convolutions.
    fn cnn_feature_hw(&self) -> (usize, usize) {
        let [_, h, w] = self.input_shape;
        (cnn_out(cnn_out(h)), cnn_out(cnn_out(w)))
    }

    /// Number of scalar parameters, computed from the config alone.
    pub fn parameter_count(&self) -> Result<usize> {
        self.validate()?;
        let linear = |i: usize, o: usize| i * o + o;
        let conv = |i: usize, o: usize| o * i * CNN_KERNEL * CNN_KERNEL + o;
        Ok(match self.arch {
            Arch::Mlp => {
                let mut sizes = vec![self.input_features()];
                sizes.extend(&self.widths);
                sizes.push(self.classes);
                sizes.windows(2).map(|p| linear(p[0], p[1])).sum()
            }
            Arch::SmallCnn => {
                let (c1, c2) = (self.widths[0], self.widths[1]);
                let (h, w) = self.cnn_feature_hw();
                conv(self.input_shape[0], c1) + conv(c1, c2) + linear(c2 * h * w, self.classes)
            }
        })
    }
}

/// Fully connected network: `Linear → ReLU → … → Linear`. Rank-4 inputs are
/// flattened per sample.
#[derive(Debug, Clone)]
pub struct Mlp {
    names: Vec<String>,
    layers: Vec<Linear>,
    relu: Relu,
}

impl Layer for Mlp {
    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single_input(inputs, "mlp")?;
        let shape = x.shape();
        let mut h = if shape.len() > 2 {
            x.reshape(&[shape[0], shape[1..].iter().product()])?
        } else {
            x.clone()
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.c(&h).join()?;
            if i < last {
                h = self.relu.c(&h).join()?;
            }
        }
        Ok(vec![h])
    }

    fn named_children(&self) -> Vec<(&str, &dyn Layer)> {
        self.names
            .iter()
            .zip(&self.layers)
            .map(|(n, l)| (n.as_str(), l as &dyn Layer))
            .collect()
    }
}

/// Two 3×3 stride-2 convolutions with ReLU, then a linear head.
#[derive(Debug, Clone)]
pub struct SmallCnn {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub head: Linear,
    relu: Relu,
}

impl Layer for SmallCnn {
    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single_input(inputs, "small_cnn")?;
        let h = self.relu.c(&self.conv1.c(x).join()?).join()?;
        let h = self.relu.c(&self.conv2.c(&h).join()?).join()?;
        let shape = h.shape();
        let flat = h.reshape(&[shape[0], shape[1..].iter().product()])?;
        Ok(vec![self.head.c(&flat).join()?])
    }

    fn named_children(&self) -> Vec<(&str, &dyn Layer)> {
        vec![("conv1", &self.conv1), ("conv2", &self.conv2), ("head", &self.head)]
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Mlp(Mlp),
    SmallCnn(SmallCnn),
}

impl Model {
    fn inner(&self) -> &dyn Layer {
        match self {
            Model::Mlp(m) => m,
            Model::SmallCnn(m) => m,
        }
    }
}

impl Layer for Model {
    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        self.inner().forward(inputs)
    }

    fn named_children(&self) -> Vec<(&str, &dyn Layer)> {
        self.inner().named_children()
    }

    fn named_own_parameters(&self) -> Vec<(&str, &Variable)> {
        self.inner().named_own_parameters()
    }
}

/// Builds and initializes the model described by `cfg`. Weights are drawn in
/// parameter enumeration order from a generator seeded by `cfg.seed`.
pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(match cfg.arch {
        Arch::Mlp => {
            let mut sizes = vec![cfg.input_features()];
            sizes.extend(&cfg.widths);
            sizes.push(cfg.classes);
            let layers = sizes
                .windows(2)
                .map(|p| Linear::new(p[0], p[1], &mut rng))
                .collect::<Result<Vec<_>>>()?;
            Model::Mlp(Mlp {
                names: (1..=layers.len()).map(|i| format!("l{i}")).collect(),
                layers,
                relu: Relu,
            })
        }
        Arch::SmallCnn => {
            let (c1, c2) = (cfg.widths[0], cfg.widths[1]);
            let conv1 = Conv2d::new(cfg.input_shape[0], c1, CNN_KERNEL, CNN_GEOMETRY, &mut rng)?;
            let conv2 = Conv2d::new(c1, c2, CNN_KERNEL, CNN_GEOMETRY, &mut rng)?;
            let (h, w) = cfg.cnn_feature_hw();
            let head = Linear::new(c2 * h * w, cfg.classes, &mut rng)?;
            Model::SmallCnn(SmallCnn {
                conv1,
                conv2,
                head,
                relu: Relu,
            })
        }
    })
}
