//! Define-by-run deep learning on a tracked host backend.
//!
//! The crate is layered the same way as the training code that uses it:
//! [`Tensor`] is a plain strided array with no gradient information,
//! [`Variable`] wraps a tensor and records the graph, and the [`nn`] module
//! builds layers, losses and optimizers on top. Buffer lifetime is managed
//! explicitly with [`tidy`].

pub mod archive;
pub mod autograd;
pub mod backend;
pub mod data;
pub mod deferred;
pub mod dtype;
pub mod error;
pub mod nn;
pub mod tensor;

pub use archive::{archive_gradients, archive_model, restore_model, TensorArchive};
pub use autograd::{FunctionNode, OpKind, Variable};
pub use backend::{tidy, Backend, BufferId, Retain};
pub use deferred::Deferred;
pub use dtype::{DType, Element};
pub use error::{ArchiveError, Error, IdxError, Result};
pub use nn::{build_model, Layer, Model, ModelConfig, MomentumSgd};
pub use tensor::{Nested, Selector, SliceSpec, Tensor};
