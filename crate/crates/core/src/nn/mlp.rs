//! Dense layers, multilayer perceptrons and reverse-mode gradients.
//!
//! A layer computes `a = act(x·W + b)` followed by optional inverted dropout
//! on `a`. Weights are stored `fan_in × fan_out` so a batch is one matrix
//! product. [`forward`] records everything [`backward`] needs in a [`Trace`].

use serde::{Deserialize, Serialize};

use super::ops::{check_dropout_rate, dropout_forward, glorot_uniform_init, softmax_in_place};
use super::{Activation, Mode};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct DenseLayer<F = f64> {
    pub weights: Tensor2<F>,
    pub bias: Vec<F>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl<F: Scalar> DenseLayer<F> {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_dropout_rate(dropout_rate)?;
        Ok(Self {
            weights: glorot_uniform_init(fan_in, fan_out, rng)?,
            bias: vec![F::zero(); fan_out],
            activation,
            dropout_rate,
        })
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.bias.len() != self.fan_out() {
            return Err(Error::shape(
                format!("layer {index}"),
                format!(
                    "bias has {} entries for fan_out {}",
                    self.bias.len(),
                    self.fan_out()
                ),
            ));
        }
        check_dropout_rate(self.dropout_rate)
    }

    /// `act(x·W + b)` without dropout.
    fn activate(&self, x: &Tensor2<F>) -> Result<Tensor2<F>> {
        let mut z = x.matmul(&self.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v = *v + *b;
            }
        }
        match self.activation {
            Activation::Identity => {}
            Activation::ReLU => {
                for v in z.data_mut() {
                    if !(*v > F::zero()) {
                        *v = F::zero();
                    }
                }
            }
            Activation::Softmax => softmax_in_place(&mut z),
        }
        Ok(z)
    }
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Mlp<F = f64> {
    layers: Vec<DenseLayer<F>>,
    mode: Mode,
}

/// What one layer saw and produced during a forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace<F> {
    pub input: Tensor2<F>,
    /// Post-activation, pre-dropout.
    pub activated: Tensor2<F>,
    /// `None` when dropout was a no-op.
    pub mask: Option<Vec<F>>,
}

/// Activations and dropout masks retained for [`backward`].
#[derive(Debug, Clone)]
pub struct Trace<F> {
    pub layers: Vec<LayerTrace<F>>,
    pub output: Tensor2<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LayerGrad<F = f64> {
    pub weights: Tensor2<F>,
    pub bias: Vec<F>,
}

/// Gradients for every parameter of an [`Mlp`], plus the gradient with
/// respect to the network input when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F = f64> {
    pub layers: Vec<LayerGrad<F>>,
    pub input: Option<Tensor2<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &Mlp<F>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Tensor2::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![F::zero(); l.fan_out()],
                })
                .collect(),
            input: None,
        }
    }

    /// All parameter gradients flattened in layer order (weights then bias).
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Where the incoming gradient of [`backward_with`] is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientAt {
    /// Gradient with respect to the network output.
    Output,
    /// Gradient with respect to the pre-softmax logits of the final layer,
    /// e.g. the fused softmax + cross-entropy gradient.
    Logits,
}

impl<F: Scalar> Mlp<F> {
    pub fn new(layers: Vec<DenseLayer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an Mlp needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate(i)?;
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(
                    format!("layer {}", i + 1),
                    format!(
                        "fan_in {} does not match previous fan_out {}",
                        pair[1].fan_in(),
                        pair[0].fan_out()
                    ),
                ));
            }
        }
        Ok(Self {
            layers,
            mode: Mode::Train,
        })
    }

    /// Builds `widths[0] → widths[1] → … → widths[n]`. Hidden layers use ReLU
    /// with `hidden_dropout`; the final layer uses `output` and no dropout.
    pub fn with_widths(
        widths: &[usize],
        hidden_dropout: f64,
        output: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least input and output widths".into(),
            ));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                DenseLayer::new(
                    widths[i],
                    widths[i + 1],
                    if last { output } else { Activation::ReLU },
                    if last { 0.0 } else { hidden_dropout },
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<F>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// All parameters flattened in layer order (weights then bias).
    pub fn flatten_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Mutable access to the `index`-th parameter in [`Mlp::flatten_params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut F> {
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            if index < nw {
                return Some(&mut l.weights.data_mut()[index]);
            }
            index -= nw;
            if index < l.bias.len() {
                return Some(&mut l.bias[index]);
            }
            index -= l.bias.len();
        }
        None
    }

    /// Eval-mode forward pass without keeping a trace.
    pub fn predict(&self, x: &Tensor2<F>) -> Result<Tensor2<F>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.activate(&h)?;
        }
        Ok(h)
    }

    fn check_input(&self, x: &Tensor2<F>) -> Result<()> {
        if x.cols() != self.input_width() {
            return Err(Error::shape(
                "layer 0",
                format!(
                    "input has {} columns, layer expects fan_in {}",
                    x.cols(),
                    self.input_width()
                ),
            ));
        }
        Ok(())
    }
}

/// Runs `net` on `x` in the network's current mode, drawing dropout masks from `rng`.
pub fn forward<F: Scalar>(net: &Mlp<F>, x: &Tensor2<F>, rng: &mut Rng) -> Result<Trace<F>> {
    net.check_input(x)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut h = x.clone();
    for layer in &net.layers {
        let activated = layer.activate(&h)?;
        let (out, mask) = dropout_forward(&activated, layer.dropout_rate, rng, net.mode)?;
        layers.push(LayerTrace {
            input: h,
            activated,
            mask: mask.map(|m| m.0),
        });
        h = out;
    }
    Ok(Trace { layers, output: h })
}

/// Gradients of a scalar loss given `∂loss/∂output`. Also returns the input gradient.
pub fn backward<F: Scalar>(
    net: &Mlp<F>,
    trace: &Trace<F>,
    grad_output: &Tensor2<F>,
) -> Result<Gradients<F>> {
    backward_with(net, trace, grad_output, GradientAt::Output, true)
}

/// General backward pass. With [`GradientAt::Logits`] the final layer's
/// softmax Jacobian is skipped; the final layer must then be a softmax
/// layer without dropout.
pub fn backward_with<F: Scalar>(
    net: &Mlp<F>,
    trace: &Trace<F>,
    grad: &Tensor2<F>,
    at: GradientAt,
    want_input_grad: bool,
) -> Result<Gradients<F>> {
    if trace.layers.len() != net.layers.len() {
        return Err(Error::Invariant(format!(
            "trace has {} layers, network has {}",
            trace.layers.len(),
            net.layers.len()
        )));
    }
    let batch = trace.output.rows();
    if grad.shape() != trace.output.shape() {
        return Err(Error::Invariant(format!(
            "output gradient shape {:?} does not match traced output {:?}",
            grad.shape(),
            trace.output.shape()
        )));
    }
    let last = net.layers.len() - 1;
    if at == GradientAt::Logits {
        let l = &net.layers[last];
        if l.activation != Activation::Softmax || trace.layers[last].mask.is_some() {
            return Err(Error::InvalidArgument(
                "logit gradients require a softmax output layer without dropout".into(),
            ));
        }
    }

    let mut grads: Vec<LayerGrad<F>> = Vec::with_capacity(net.layers.len());
    let mut g = grad.clone();
    for (i, (layer, t)) in net.layers.iter().zip(&trace.layers).enumerate().rev() {
        if t.input.shape() != (batch, layer.fan_in())
            || t.activated.shape() != (batch, layer.fan_out())
            || g.shape() != (batch, layer.fan_out())
        {
            return Err(Error::Invariant(format!(
                "stale trace at layer {i}: input {:?}, activated {:?}, layer {}x{}",
                t.input.shape(),
                t.activated.shape(),
                layer.fan_in(),
                layer.fan_out()
            )));
        }
        if let Some(mask) = &t.mask {
            for (v, m) in g.data_mut().iter_mut().zip(mask) {
                *v = *v * *m;
            }
        }
        let skip_activation = at == GradientAt::Logits && i == last;
        if !skip_activation {
            activation_backward(layer.activation, &t.activated, &mut g);
        }
        let dw = t.input.matmul_tn(&g)?;
        let mut db = vec![F::zero(); layer.fan_out()];
        for row in g.iter_rows() {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc = *acc + *v;
            }
        }
        grads.push(LayerGrad {
            weights: dw,
            bias: db,
        });
        if i > 0 || want_input_grad {
            g = g.matmul_nt(&layer.weights)?;
        }
    }
    grads.reverse();
    Ok(Gradients {
        layers: grads,
        input: want_input_grad.then_some(g),
    })
}

/// Turns `∂L/∂a` into `∂L/∂z` in place, where `a = act(z)`.
fn activation_backward<F: Scalar>(act: Activation, activated: &Tensor2<F>, g: &mut Tensor2<F>) {
    match act {
        Activation::Identity => {}
        Activation::ReLU => {
            for (v, a) in g.data_mut().iter_mut().zip(activated.data()) {
                if !(*a > F::zero()) {
                    *v = F::zero();
                }
            }
        }
        Activation::Softmax => {
            // dz = s ⊙ (g − ⟨g, s⟩) per row.
            for r in 0..g.rows() {
                let s = activated.row(r);
                let row = g.row_mut(r);
                let dot = row
                    .iter()
                    .zip(s)
                    .fold(F::zero(), |acc, (gv, sv)| acc + *gv * *sv);
                for (gv, sv) in row.iter_mut().zip(s) {
                    *gv = *sv * (*gv - dot);
                }
            }
        }
    }
}
