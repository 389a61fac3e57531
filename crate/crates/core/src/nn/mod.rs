//! Small deterministic tensor / neural-network engine: layer graph,
//! forward and reverse passes, SGD with a step learning-rate schedule,
//! finite-difference checking and a binary parameter format.

pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod loss;
mod ops;
pub mod params;
pub mod spec;
pub mod tensor;
pub mod train;

pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{backward, backward_from, forward, ForwardCache};
pub use loss::{inverse_frequency_weights, Example, Target};
pub use params::{Gradients, LayerGrad, LayerParams, Params};
pub use spec::{LayerKind, LayerSpec, LossKind, NetworkBuilder, NetworkSpec, Node};
pub use tensor::Tensor;
pub use train::{batch_gradient, sgd_epoch, train, TrainConfig, TrainHistory};
