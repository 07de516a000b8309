//! Oracles and fixtures shared by the integration tests. The forward pass and
//! losses here are written with plain loops, independently of the library.
#![allow(dead_code)]

use lad::data::{synth_gaussian_shift, FeatureDataset, SyntheticSpec};
use lad::nn::{Activation, Mlp};
use lad::objective::{DomainBatch, LabeledBatch};
use lad::rng::Rng;
use lad::trainer::{LadModel, TrainConfig};
use lad::Tensor2;
use rand::Rng as _;
use rand_distr::StandardNormal;

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Eval-mode forward pass of a ReLU/softmax stack. Also returns every hidden
/// pre-activation so callers can stay away from the ReLU kink.
pub fn naive_forward(net: &Mlp, x: &Tensor2) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut pre_acts = Vec::new();
    let mut out = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let mut h: Vec<f64> = x.row(r).to_vec();
        for layer in net.layers() {
            let (fan_in, fan_out) = (layer.weights.rows(), layer.weights.cols());
            let mut z = vec![0.0; fan_out];
            for j in 0..fan_out {
                let mut acc = layer.bias[j];
                for i in 0..fan_in {
                    acc += h[i] * layer.weights.get(i, j);
                }
                z[j] = acc;
            }
            h = match layer.activation {
                Activation::ReLU => {
                    pre_acts.extend_from_slice(&z);
                    z.iter().map(|v| v.max(0.0)).collect()
                }
                Activation::Softmax => {
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                }
                Activation::Identity => z,
            };
        }
        out.push(h);
    }
    (out, pre_acts)
}

fn neg_log(p: f64) -> f64 {
    -p.max(1e-12).ln()
}

/// `(1/B) Σ w·(−ln p_y)`.
pub fn label_loss_oracle(probs: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((p, &y), w)| w * neg_log(p[y]))
        .sum();
    total / probs.len() as f64
}

/// Mean weighted loss over source rows (class 1) plus the same over target
/// rows (class 0).
pub fn domain_loss_oracle(probs: &[Vec<f64>], domains: &[u8], weights: &[f64]) -> f64 {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for ((p, &d), w) in probs.iter().zip(domains).zip(weights) {
        sums[d as usize] += w * neg_log(p[d as usize]);
        counts[d as usize] += 1;
    }
    sums[0] / counts[0] as f64 + sums[1] / counts[1] as f64
}

/// Weighted domain loss of `D(C(x))` through the oracle forward passes.
pub fn composed_domain_loss(c: &Mlp, d: &Mlp, batch: &DomainBatch) -> f64 {
    let (pc, _) = naive_forward(c, &batch.features);
    let pc = Tensor2::from_vec(pc.len(), c.output_width(), pc.concat()).unwrap();
    let (pd, _) = naive_forward(d, &pc);
    domain_loss_oracle(&pd, &batch.domain_ids, &batch.instance_weights)
}

pub fn composed_label_loss(c: &Mlp, batch: &LabeledBatch) -> f64 {
    let (p, _) = naive_forward(c, &batch.features);
    label_loss_oracle(&p, &batch.labels, &batch.instance_weights)
}

/// `|a − n| / max(|a|, |n|)`, with the denominator floored at `1e-8` so that
/// gradients which are zero up to rounding compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference of `loss` in every parameter of `net`.
pub fn numeric_grad(net: &Mlp, mut loss: impl FnMut(&Mlp) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.num_params())
        .map(|i| {
            let orig = *probe.param_mut(i).unwrap();
            *probe.param_mut(i).unwrap() = orig + FD_EPS;
            let up = loss(&probe);
            *probe.param_mut(i).unwrap() = orig - FD_EPS;
            let down = loss(&probe);
            *probe.param_mut(i).unwrap() = orig;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

pub fn normal_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

pub fn randomize_biases(net: &mut Mlp, rng: &mut Rng) {
    for layer in net.layers_mut() {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
}

/// One randomly drawn small model with a source batch and a domain batch whose
/// hidden pre-activations all stay at least `1e-3` away from zero.
pub struct GradFixture {
    pub model: LadModel,
    pub label_batch: LabeledBatch,
    pub domain_batch: DomainBatch,
}

pub fn grad_fixture(seed: u64) -> GradFixture {
    let mut rng = Rng::new(seed);
    let mut c: Mlp = Mlp::with_widths(&[8, 16, 16, 5], 0.5, Activation::Softmax, &mut rng).unwrap();
    let mut d: Mlp = Mlp::with_widths(&[5, 16, 16, 2], 0.0, Activation::Softmax, &mut rng).unwrap();
    randomize_biases(&mut c, &mut rng);
    randomize_biases(&mut d, &mut rng);
    c.set_mode(lad::nn::Mode::Eval);
    d.set_mode(lad::nn::Mode::Eval);
    let far_from_kink = |v: &[f64]| v.iter().all(|z| z.abs() > 1e-3);
    loop {
        let xs = normal_tensor(4, 8, &mut rng);
        let xt = normal_tensor(3, 8, &mut rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
        let sw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..3.0)).collect();
        let tw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..3.0)).collect();
        let domain_batch = DomainBatch::concat(&xs, &sw, &xt, &tw).unwrap();
        let (pc, c_pre) = naive_forward(&c, &domain_batch.features);
        let pc = Tensor2::from_vec(pc.len(), 5, pc.concat()).unwrap();
        let (_, d_pre) = naive_forward(&d, &pc);
        if far_from_kink(&c_pre) && far_from_kink(&d_pre) {
            return GradFixture {
                model: LadModel::from_parts(c, d, 0.001, 0.9).unwrap(),
                label_batch: LabeledBatch::new(xs, labels, sw).unwrap(),
                domain_batch,
            };
        }
    }
}

/// Largest relative error over all parameters of both losses, and the number
/// of parameters checked.
pub fn max_grad_error(fx: &GradFixture) -> (f64, usize) {
    let mut rng = Rng::new(0);
    let c = &fx.model.classifier;
    let d = &fx.model.discriminator;
    let (_, gs) = lad::trainer::label_gradients(c, &fx.label_batch, &mut rng).unwrap();
    let ns = numeric_grad(c, |net| composed_label_loss(net, &fx.label_batch));

    let gd = fx.model.domain_gradients(&fx.domain_batch, &mut rng, true).unwrap();
    let nd_c = numeric_grad(c, |net| composed_domain_loss(net, d, &fx.domain_batch));
    let nd_d = numeric_grad(d, |net| composed_domain_loss(c, net, &fx.domain_batch));

    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (a, num) in gs.flatten().iter().zip(&ns) {
        worst = worst.max(rel_err(*a, *num));
        n += 1;
    }
    // The classifier sits behind the reversal layer: its gradient is −∂L_D.
    for (a, num) in gd.classifier.flatten().iter().zip(&nd_c) {
        worst = worst.max(rel_err(*a, -num));
        n += 1;
    }
    for (a, num) in gd.discriminator.flatten().iter().zip(&nd_d) {
        worst = worst.max(rel_err(*a, *num));
        n += 1;
    }
    assert_eq!(n, 2 * c.num_params() + d.num_params());
    (worst, n)
}

/// The reference shift with `n` rows per domain.
pub fn reference_domains(seed: u64, n: usize) -> (FeatureDataset, FeatureDataset) {
    let spec = SyntheticSpec {
        n_source: n,
        n_target: n,
        ..SyntheticSpec::reference(seed)
    };
    synth_gaussian_shift(&spec).unwrap()
}

/// Settings used for the synthetic runs: a narrow network and few epochs.
pub fn small_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        n_epochs: epochs,
        hidden_width: 32,
        seed,
        record_every: 1,
        ..TrainConfig::default()
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
