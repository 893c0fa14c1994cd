use super::functions::softmax_cross_entropy;
use super::{Layer, MomentumSgd};
use crate::autograd::Variable;
use crate::error::Result;
use crate::tensor::Tensor;

/// Clears gradients, runs forward and backward on one batch and leaves the
/// gradients on the model's parameters. Returns the loss.
pub fn compute_gradients(model: &dyn Layer, images: &Tensor, labels: &Tensor) -> Result<f32> {
    model.zero_grad();
    let x = Variable::constant(images.clone());
    let logits = model.c(&x).join()?;
    let loss = softmax_cross_entropy(&logits, labels)?;
    loss.backward().join()?;
    loss.data().item()
}

/// One optimizer step on one batch. Returns the loss before the update.
pub fn train_step(model: &dyn Layer, optimizer: &MomentumSgd, images: &Tensor, labels: &Tensor) -> Result<f32> {
    optimizer.zero_grad();
    let loss = compute_gradients(model, images, labels)?;
    optimizer.step().join()?;
    Ok(loss)
}

/// Fraction of samples whose highest logit is the true label.
pub fn evaluate_accuracy(model: &dyn Layer, images: &Tensor, labels: &Tensor) -> Result<f64> {
    let x = Variable::constant(images.clone());
    let logits = model.c(&x).join()?.data();
    let predicted = logits.argmax_rows()?;
    let labels = labels.to_vec::<i32>()?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted
        .iter()
        .zip(&labels)
        .filter(|(&p, &l)| p as i32 == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
