//! Batch normalization.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Normalize with statistics of the current input and update running stats.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug)]
pub struct RunningStats<T: Scalar> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

/// Normalizes `[N, C, ...]` per channel over every non-channel axis, then
/// applies the affine map `gamma * x_hat + beta`.
///
/// With a batch of one this is instance normalization over the spatial axes.
/// Train mode updates the running statistics only while gradients are
/// recorded; under [`no_grad`](super::no_grad) it normalizes with batch
/// statistics and leaves them untouched.
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    const OP: &str = "batch_norm";
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::shape(
            OP,
            format!("input {shape:?} has no channel axis"),
        ));
    }
    let (n, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running mean", &stats.mean),
        ("running var", &stats.var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(
                OP,
                format!("{name} has shape {:?}, input has {c} channels", t.shape()),
            ));
        }
    }

    let x = input.data();
    let count = n * spatial;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        BnMode::Train => {
            let cnt = T::from_usize(count).unwrap();
            for ch in 0..c {
                let chan = || {
                    (0..n).flat_map(move |b| ((b * c + ch) * spatial)..((b * c + ch + 1) * spatial))
                };
                let m = chan().fold(T::zero(), |a, i| a + x[i]) / cnt;
                let v = chan().fold(T::zero(), |a, i| {
                    let d = x[i] - m;
                    a + d * d
                }) / cnt;
                mean[ch] = m;
                var[ch] = v;
            }
            if !super::grad_enabled() {
                // Batch statistics without touching the stored ones.
                drop(x);
                return finish(input, gamma, beta, &mean, &var, [n, c, spatial], mode);
            }
            let mom = T::from_f64c(BN_MOMENTUM);
            let unbias = if count > 1 {
                cnt / T::from_usize(count - 1).unwrap()
            } else {
                T::one()
            };
            let mut rm = stats.mean.data_mut();
            let mut rv = stats.var.data_mut();
            for ch in 0..c {
                rm[ch] = (T::one() - mom) * rm[ch] + mom * mean[ch];
                rv[ch] = (T::one() - mom) * rv[ch] + mom * var[ch] * unbias;
            }
        }
        BnMode::Eval => {
            mean.copy_from_slice(&stats.mean.data());
            var.copy_from_slice(&stats.var.data());
        }
    }

    drop(x);
    finish(input, gamma, beta, &mean, &var, [n, c, spatial], mode)
}

fn finish<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    [n, c, spatial]: [usize; 3],
    mode: BnMode,
) -> Result<Tensor<T>> {
    const OP: &str = "batch_norm";
    let shape = input.shape();
    let count = n * spatial;
    let x = input.data();
    let eps = T::from_f64c(BN_EPS);
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * spatial;
            for i in base..base + spatial {
                let h = (x[i] - mean[ch]) * inv[ch];
                xhat[i] = h;
                out[i] = gd[ch] * h + bd[ch];
            }
        }
    }
    drop((x, gd, bd));

    let g_c = gamma.clone();
    Ok(Tensor::from_op(
        OP,
        shape.to_vec(),
        out,
        vec![input.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _, needs| {
            let gamma = g_c.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * spatial;
                    for i in base..base + spatial {
                        sum_g[ch] = sum_g[ch] + g[i];
                        sum_gx[ch] = sum_gx[ch] + g[i] * xhat[i];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![T::zero(); g.len()];
                let cnt = T::from_usize(count).unwrap();
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * spatial;
                        let scale = gamma[ch] * inv[ch];
                        for i in base..base + spatial {
                            gx[i] = match mode {
                                BnMode::Train => {
                                    scale * (g[i] - sum_g[ch] / cnt - xhat[i] * sum_gx[ch] / cnt)
                                }
                                BnMode::Eval => scale * g[i],
                            };
                        }
                    }
                }
                gx
            });
            vec![
                gx,
                needs[1].then(|| sum_gx.clone()),
                needs[2].then(|| sum_g.clone()),
            ]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channels_map_to_beta() {
        let mut data = vec![0.0; 2 * 9];
        data[..9].fill(3.0);
        data[9..].fill(-2.0);
        let x = Tensor::<f64>::from_vec(&[1, 2, 3, 3], data).unwrap();
        let gamma = Tensor::from_vec(&[2], vec![1.5, 0.7]).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.25, -0.5]).unwrap();
        let stats = RunningStats::new(2);
        let y = batch_norm(&x, &gamma, &beta, &stats, BnMode::Train)
            .unwrap()
            .to_vec();
        assert!(y[..9].iter().all(|&v| v == 0.25));
        assert!(y[9..].iter().all(|&v| v == -0.5));
    }

    #[test]
    fn standardized_input_is_nearly_unchanged() {
        // Per channel: values ±1 -> mean 0, population variance 1.
        let data = vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], data.clone()).unwrap();
        let stats = RunningStats::new(2);
        let y = batch_norm(
            &x,
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &stats,
            BnMode::Train,
        )
        .unwrap()
        .to_vec();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.iter().zip(&data) {
            assert!((a - b * scale).abs() < 1e-15);
        }
        // Running variance moves 10% of the way towards the unbiased estimate 4/3.
        let rv = stats.var.to_vec();
        assert!((rv[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_is_the_stored_affine_map() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![0.0, 1.0, 4.0]).unwrap();
        let stats = RunningStats::new(1);
        *stats.mean.data_mut() = vec![2.0];
        *stats.var.data_mut() = vec![4.0];
        let gamma = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let beta = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let y = batch_norm(&x, &gamma, &beta, &stats, BnMode::Eval)
            .unwrap()
            .to_vec();
        let inv = 1.0 / (4.0 + BN_EPS).sqrt();
        let expected: Vec<f64> = [0.0, 1.0, 4.0]
            .iter()
            .map(|v| 3.0 * ((v - 2.0) * inv) + 1.0)
            .collect();
        assert_eq!(y, expected);
        assert_eq!(stats.mean.to_vec(), vec![2.0]);
    }

    #[test]
    fn parameter_shape_checked() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let stats = RunningStats::new(3);
        let err = batch_norm(
            &x,
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[3]),
            &stats,
            BnMode::Eval,
        );
        assert!(err.is_err());
    }
}
