//! Element-wise and row-wise primitives: initialization, activations, dropout
//! and the gradient reversal layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Glorot/Xavier uniform weights on `[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform_init<F: Scalar>(
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Result<Tensor2<F>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "glorot init needs nonzero fans, got {fan_in}x{fan_out}"
        )));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::from_f64_lossy(limit * (2.0 * rng.uniform() - 1.0)))
        .collect();
    Tensor2::from_vec(fan_in, fan_out, data)
}

pub fn relu<F: Scalar>(x: &Tensor2<F>) -> Tensor2<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Row-wise softmax. The row maximum is subtracted before exponentiating.
pub fn softmax<F: Scalar>(logits: &Tensor2<F>) -> Tensor2<F> {
    let mut out = logits.clone();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place<F: Scalar>(t: &mut Tensor2<F>) {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Inverted dropout mask: each entry is either `0` or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<F>(pub Vec<F>);

/// Applies inverted dropout. Returns `None` for the mask when dropout is a
/// no-op (Eval mode or `rate == 0`); no random numbers are consumed then.
pub fn dropout_forward<F: Scalar>(
    x: &Tensor2<F>,
    rate: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Tensor2<F>, Option<DropoutMask<F>>)> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = F::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<F> = (0..x.data().len())
        .map(|_| {
            if rng.uniform() < rate {
                F::zero()
            } else {
                scale
            }
        })
        .collect();
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v = *v * *m;
    }
    Ok((out, Some(DropoutMask(mask))))
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Gradient reversal, forward pass: the identity.
#[inline]
pub fn grl_forward<F: Scalar>(x: &Tensor2<F>) -> Tensor2<F> {
    x.clone()
}

/// Gradient reversal, backward pass: negation (scale fixed at 1).
pub fn grl_backward<F: Scalar>(grad: &Tensor2<F>) -> Tensor2<F> {
    grad.map(|v| -v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn t(rows: &[&[f64]]) -> Tensor2 {
        Tensor2::from_rows(rows).unwrap()
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = Rng::new(1);
        let w: Tensor2 = glorot_uniform_init(1, 1, &mut rng).unwrap();
        assert!(w.data()[0].abs() <= 3f64.sqrt());
        let w: Tensor2 = glorot_uniform_init(3, 3, &mut rng).unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 1.0));
        assert!(glorot_uniform_init::<f64>(0, 4, &mut rng).is_err());
        assert!(glorot_uniform_init::<f64>(4, 0, &mut rng).is_err());
    }

    #[test]
    fn glorot_moments_large_fan() {
        let mut rng = Rng::new(2);
        let limit = (6.0f64 / 2048.0).sqrt();
        let mut values = Vec::new();
        while values.len() < 100_000 {
            let w: Tensor2 = glorot_uniform_init(1024, 1024, &mut rng).unwrap();
            values.extend_from_slice(w.data());
        }
        values.truncate(100_000);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(max <= limit);
        // Uniform on [-L, L] has variance L²/3.
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        assert!((var - limit * limit / 3.0).abs() < 0.02 * limit * limit);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[&[-1.0, 0.0, 2.0]])).data(), &[0.0, 0.0, 2.0]);
        let pos = t(&[&[0.0, 1.5, 3.0]]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&t(&[&[0.0, 0.0]])).data(), &[0.5, 0.5]);
        let big = softmax(&t(&[&[1000.0, 1000.0, 1000.0]]));
        for v in big.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&t(&[&[1f64.ln(), 2f64.ln(), 3f64.ln()]]));
        for (v, e) in s.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_noop_cases() {
        let mut rng = Rng::new(0);
        let x = t(&[&[1.0, -2.0, 3.0]]);
        let (y, m) = dropout_forward(&x, 0.0, &mut rng, Mode::Train).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, m) = dropout_forward(&x, 0.5, &mut rng, Mode::Eval).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
        assert!(dropout_forward(&x, 1.0, &mut rng, Mode::Train).is_err());
        assert!(dropout_forward(&x, -0.1, &mut rng, Mode::Train).is_err());
    }

    #[test]
    fn inverted_dropout_is_unbiased() {
        let n = 100_000;
        let mut rng = Rng::new(42);
        let x = Tensor2::filled(1, n, 1.0);
        let (y, _) = dropout_forward(&x, 0.5, &mut rng, Mode::Train).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        // Each entry is 0 or 2, so sd = 1 and 3σ/√n ≈ 0.0095.
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt());
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn grl_examples() {
        let g = t(&[&[1.0, -2.0]]);
        assert_eq!(grl_backward(&g).data(), &[-1.0, 2.0]);
        let z = Tensor2::<f64>::zeros(2, 3);
        assert_eq!(grl_backward(&z).data(), z.data());
        assert_eq!(grl_forward(&g), g);
    }

    proptest! {
        #[test]
        fn relu_idempotent(v in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let x = Tensor2::from_vec(1, v.len(), v).unwrap();
            prop_assert_eq!(relu(&relu(&x)), relu(&x));
        }

        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-1e3f64..1e3, 1..40), cols in 1usize..5) {
            let rows = v.len() / cols;
            prop_assume!(rows > 0);
            let x = Tensor2::from_vec(rows, cols, v[..rows * cols].to_vec()).unwrap();
            let s = softmax(&x);
            for row in s.iter_rows() {
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|p| *p >= 0.0 && *p <= 1.0));
            }
        }

        #[test]
        fn grl_is_involution(v in proptest::collection::vec(-1e9f64..1e9, 1..32)) {
            let g = Tensor2::from_vec(1, v.len(), v).unwrap();
            prop_assert_eq!(grl_backward(&grl_backward(&g)), g);
        }
    }
}
