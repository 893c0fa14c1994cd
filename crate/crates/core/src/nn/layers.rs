use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::{single_input, Layer};
use crate::autograd::{self, Variable};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Tensor};

/// Samples `numel` weights from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn fan_in_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let numel = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(data, shape)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Variable,
    pub bias: Variable,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Result<Linear> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::InvalidConfig("linear features must be positive".into()));
        }
        Ok(Linear {
            weight: Variable::parameter(fan_in_uniform(rng, &[out_features, in_features], in_features)?),
            bias: Variable::parameter(Tensor::zeros(DType::F32, &[out_features])),
        })
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Linear> {
        let ws = weight.shape();
        if ws.len() != 2 || bias.shape() != [ws[0]] {
            return Err(Error::shape("linear", ws, bias.shape()));
        }
        Ok(Linear {
            weight: Variable::parameter(weight),
            bias: Variable::parameter(bias),
        })
    }
}

impl Layer for Linear {
    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single_input(inputs, "linear")?;
        Ok(vec![autograd::linear(x, &self.weight, &self.bias)?])
    }

    fn named_own_parameters(&self) -> Vec<(&str, &Variable)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Variable,
    pub bias: Variable,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geometry: ConvGeometry,
        rng: &mut impl Rng,
    ) -> Result<Conv2d> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || geometry.stride == 0 {
            return Err(Error::InvalidConfig("conv2d sizes must be positive".into()));
        }
        let fan_in = in_channels * kernel * kernel;
        Ok(Conv2d {
            weight: Variable::parameter(fan_in_uniform(
                rng,
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
            )?),
            bias: Variable::parameter(Tensor::zeros(DType::F32, &[out_channels])),
            geometry,
        })
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let ws = self.weight.shape();
        let (s, p) = (self.geometry.stride, self.geometry.padding);
        ((h + 2 * p - ws[2]) / s + 1, (w + 2 * p - ws[3]) / s + 1)
    }
}

impl Layer for Conv2d {
    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single_input(inputs, "conv2d")?;
        Ok(vec![autograd::conv2d(x, &self.weight, Some(&self.bias), self.geometry)?])
    }

    fn named_own_parameters(&self) -> Vec<(&str, &Variable)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Relu;

impl Layer for Relu {
    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        Ok(vec![single_input(inputs, "relu")?.relu()?])
    }
}
