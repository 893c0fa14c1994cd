use crate::autograd::Variable;
use crate::backend::{BufferId, Retain};
use crate::deferred::Deferred;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum SGD without dampening: `v ← μ·v + g`, then `p ← p − lr·v`.
/// Updates are applied in place in parameter enumeration order.
#[derive(Debug)]
pub struct MomentumSgd {
    lr: f32,
    momentum: f32,
    params: Vec<(String, Variable)>,
    velocity: Vec<Tensor>,
}

impl MomentumSgd {
    pub fn new(params: Vec<(String, Variable)>, lr: f32, momentum: f32) -> Result<MomentumSgd> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!("momentum must be in [0, 1), got {momentum}")));
        }
        let velocity = params.iter().map(|(_, p)| p.data().zeros_like()).collect();
        Ok(MomentumSgd {
            lr,
            momentum,
            params,
            velocity,
        })
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }

    pub fn parameters(&self) -> &[(String, Variable)] {
        &self.params
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// Applies one update from the gradients stored on the parameters.
    pub fn step(&self) -> Deferred<()> {
        let grads = self
            .params
            .iter()
            .map(|(name, p)| p.grad().ok_or_else(|| Error::MissingGradient(name.clone())))
            .collect::<Result<Vec<_>>>();
        Deferred::ready(grads.and_then(|g| self.apply_gradients(&g)))
    }

    /// Applies one update from explicit gradients, one per parameter in
    /// enumeration order.
    pub fn apply_gradients(&self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::MissingGradient(format!(
                "expected {} gradients, got {}",
                self.params.len(),
                grads.len()
            )));
        }
        for ((_, p), g) in self.params.iter().zip(grads) {
            let data = p.data();
            if g.shape() != data.shape() {
                return Err(Error::shape("momentum_sgd", data.shape(), g.shape()));
            }
        }
        let (lr, mu) = (self.lr, self.momentum);
        for (((_, p), v), g) in self.params.iter().zip(&self.velocity).zip(grads) {
            let g = g.to_vec::<f32>()?;
            v.update_in_place(|v| {
                for (vi, &gi) in v.iter_mut().zip(&g) {
                    *vi = mu * *vi + gi;
                }
            })?;
            let v = v.to_vec::<f32>()?;
            p.data().update_in_place(|p| {
                for (pi, &vi) in p.iter_mut().zip(&v) {
                    *pi -= lr * vi;
                }
            })?;
        }
        Ok(())
    }
}

impl Retain for MomentumSgd {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        for (_, p) in &self.params {
            out.push(p.data().buffer_id());
        }
        for v in &self.velocity {
            out.push(v.buffer_id());
        }
    }
}
