//! Minibatch SGD with Nesterov momentum.
//!
//! For every parameter `p` with gradient `g` and velocity `v` (initially 0):
//!
//! ```text
//! v ← μ·v − lr·g
//! p ← p + μ·v − lr·g
//! ```
//!
//! This is the look-ahead form used by Keras/TensorFlow `SGD(nesterov=True)`,
//! where `μ` is the momentum and `lr` the learning rate. With `μ = 0` it is
//! plain SGD.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, LayerGrad, Mlp};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor2};

/// Applies one Nesterov update to a flat parameter slice.
pub fn nesterov_update<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    velocity: &mut [F],
    learning_rate: F,
    momentum: F,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::InvalidArgument(format!(
            "nesterov update: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let step = learning_rate * *g;
        *v = momentum * *v - step;
        *p = *p + momentum * *v - step;
    }
    Ok(())
}

/// Velocities for one network, mirroring its parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct OptimizerState<F = f64> {
    pub velocity: Vec<LayerGrad<F>>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(net: &Mlp<F>, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: Gradients::zeros_like(net).layers,
            learning_rate,
            momentum,
        }
    }

    /// `sgd_nesterov_step`: updates `net` in place from `grads`.
    pub fn step(&mut self, net: &mut Mlp<F>, grads: &Gradients<F>) -> Result<()> {
        let layers = net.layers_mut();
        if layers.len() != grads.layers.len() || layers.len() != self.velocity.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer step: {} layers, {} gradient layers, {} velocity layers",
                layers.len(),
                grads.layers.len(),
                self.velocity.len()
            )));
        }
        let lr = F::from_f64_lossy(self.learning_rate);
        let mu = F::from_f64_lossy(self.momentum);
        for (i, ((layer, g), v)) in layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.velocity)
            .enumerate()
        {
            check_shape(i, &layer.weights, &g.weights, &v.weights)?;
            nesterov_update(
                layer.weights.data_mut(),
                g.weights.data(),
                v.weights.data_mut(),
                lr,
                mu,
            )?;
            nesterov_update(&mut layer.bias, &g.bias, &mut v.bias, lr, mu)?;
        }
        Ok(())
    }
}

fn check_shape<F: Scalar>(
    layer: usize,
    p: &Tensor2<F>,
    g: &Tensor2<F>,
    v: &Tensor2<F>,
) -> Result<()> {
    if p.shape() != g.shape() || p.shape() != v.shape() {
        return Err(Error::InvalidArgument(format!(
            "optimizer step, layer {layer}: param {:?}, grad {:?}, velocity {:?}",
            p.shape(),
            g.shape(),
            v.shape()
        )));
    }
    Ok(())
}
