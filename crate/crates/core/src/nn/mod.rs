//! Layers, models, losses and optimizers.

mod layers;
mod model;
mod optim;
mod train;

pub mod functions;

pub use layers::{Conv2d, Linear, Relu};
pub use model::{build_model, Arch, Mlp, Model, ModelConfig, SmallCnn};
pub use optim::MomentumSgd;
pub use train::{compute_gradients, evaluate_accuracy, train_step};

use crate::autograd::Variable;
use crate::deferred::Deferred;
use crate::error::{Error, Result};

/// A differentiable module with named parameters and named sub-layers.
///
/// Parameter enumeration is depth-first in registration order: a layer's own
/// parameters come first, then each child's under `child.` prefixes.
pub trait Layer {
    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>>;

    fn named_children(&self) -> Vec<(&str, &dyn Layer)> {
        Vec::new()
    }

    fn named_own_parameters(&self) -> Vec<(&str, &Variable)> {
        Vec::new()
    }

    /// Every parameter under its dotted name, e.g. `l1.weight`.
    fn parameters(&self) -> Vec<(String, Variable)> {
        let mut out: Vec<(String, Variable)> = self
            .named_own_parameters()
            .into_iter()
            .map(|(n, p)| (n.to_string(), p.clone()))
            .collect();
        for (child, layer) in self.named_children() {
            out.extend(
                layer
                    .parameters()
                    .into_iter()
                    .map(|(n, p)| (format!("{child}.{n}"), p)),
            );
        }
        out
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, p)| p.data().numel()).sum()
    }

    /// Clears every parameter's gradient.
    fn zero_grad(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }

    fn call(&self, inputs: &[Variable]) -> Deferred<Vec<Variable>> {
        Deferred::ready(self.forward(inputs))
    }

    /// Single-input, single-output call.
    fn c(&self, x: &Variable) -> Deferred<Variable> {
        Deferred::ready(self.forward(std::slice::from_ref(x)).and_then(|mut out| {
            if out.len() == 1 {
                Ok(out.remove(0))
            } else {
                Err(Error::OutputArity(out.len()))
            }
        }))
    }
}

/// Retains parameter data only. Gradients are transient per step.
macro_rules! retain_parameters {
    ($($t:ty),*) => {
        $(impl crate::backend::Retain for $t {
            fn collect_buffers(&self, out: &mut Vec<crate::backend::BufferId>) {
                for (_, p) in Layer::parameters(self) {
                    out.push(p.data().buffer_id());
                }
            }
        })*
    };
}

retain_parameters!(Linear, Conv2d, Relu, Mlp, SmallCnn, Model, dyn Layer + '_);

fn single_input<'a>(inputs: &'a [Variable], layer: &'static str) -> Result<&'a Variable> {
    match inputs {
        [x] => Ok(x),
        _ => Err(Error::InvalidConfig(format!("{layer} takes one input, got {}", inputs.len()))),
    }
}
