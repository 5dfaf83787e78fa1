//! Per-client feed-forward classifiers: supervised training, distillation
//! against soft targets, and evaluation.

mod mlp;
mod train;

pub use mlp::{softmax_t, Layer, MlpModel};
pub use train::{distill, evaluate, loss_and_gradient, train_supervised, SgdParams, SoftTarget};
