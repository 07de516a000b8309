//! Minimal dense network engine: Glorot init, ReLU/softmax, inverted
//! dropout, gradient reversal, reverse-mode gradients and Nesterov SGD.

mod mlp;
mod ops;
mod optim;

pub use mlp::{
    backward, backward_with, forward, DenseLayer, GradientAt, Gradients, LayerGrad, LayerTrace,
    Mlp, Trace,
};
pub use ops::{
    dropout_forward, glorot_uniform_init, grl_backward, grl_forward, relu, softmax, Activation,
    DropoutMask, Mode,
};
pub use optim::{nesterov_update, OptimizerState};
