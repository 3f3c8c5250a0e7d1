use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn split(shape: &[usize], hyps: &[f64]) -> Result<(usize, usize, usize)> {
    const OP: &str = "soft_argmin";
    if shape.len() < 3 {
        return Err(Error::shape(
            OP,
            format!("cost volume needs [.., D, H, W], got {shape:?}"),
        ));
    }
    let n = shape.len();
    let d = shape[n - 3];
    if d != hyps.len() {
        return Err(Error::shape(
            OP,
            format!(
                "cost volume has {d} levels but {} hypotheses were given",
                hyps.len()
            ),
        ));
    }
    Ok((
        shape[..n - 3].iter().product(),
        d,
        shape[n - 2] * shape[n - 1],
    ))
}

/// Per-pixel `P(i) = exp(-C(i)) / sum_j exp(-C(j))`, computed with a max shift.
/// Layout matches the cost volume.
pub fn disparity_probabilities<T: Scalar>(cost: &Tensor<T>, hyps: &[f64]) -> Result<Vec<f64>> {
    let (b, d, p) = split(cost.shape(), hyps)?;
    let c = cost.data();
    let mut prob = vec![0.0; c.len()];
    for bi in 0..b {
        let base = bi * d * p;
        for px in 0..p {
            let at = |i: usize| base + i * p + px;
            let m = (0..d)
                .map(|i| -c[at(i)].to_f64c())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..d {
                let e = (-c[at(i)].to_f64c() - m).exp();
                prob[at(i)] = e;
                z += e;
            }
            for i in 0..d {
                prob[at(i)] /= z;
            }
        }
    }
    Ok(prob)
}

/// Soft-argmin over the disparity axis: `D = sum_i disp(i) P(i)`.
///
/// `cost` is `[.., D, H, W]`; the result drops the `D` axis. The gradient is
/// `dD/dC(i) = P(i) (D - disp(i))`.
pub fn soft_argmin<T: Scalar>(cost: &Tensor<T>, hyps: &[f64]) -> Result<Tensor<T>> {
    let (b, d, p) = split(cost.shape(), hyps)?;
    let prob = disparity_probabilities(cost, hyps)?;
    let mut out = vec![0.0; b * p];
    for bi in 0..b {
        for px in 0..p {
            out[bi * p + px] = (0..d)
                .map(|i| hyps[i] * prob[bi * d * p + i * p + px])
                .sum();
        }
    }
    let shape = cost.shape();
    let mut out_shape = shape[..shape.len() - 3].to_vec();
    out_shape.extend_from_slice(&shape[shape.len() - 2..]);
    let hyps = hyps.to_vec();
    let expect = out.clone();
    Ok(Tensor::from_op(
        "soft_argmin",
        out_shape,
        out.into_iter().map(T::from_f64c).collect(),
        vec![cost.clone()],
        Box::new(move |g, _, _| {
            let mut gc = vec![T::zero(); b * d * p];
            for bi in 0..b {
                for px in 0..p {
                    let go = g[bi * p + px].to_f64c();
                    let e = expect[bi * p + px];
                    for i in 0..d {
                        let k = bi * d * p + i * p + px;
                        gc[k] = T::from_f64c(go * prob[k] * (e - hyps[i]));
                    }
                }
            }
            vec![Some(gc)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_costs_give_the_mean() {
        let c = Tensor::<f64>::zeros(&[4, 2, 3]);
        let d = soft_argmin(&c, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.shape(), &[2, 3]);
        assert!(d.to_vec().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn one_hot_limit() {
        let c = Tensor::<f64>::from_vec(&[4, 1, 1], vec![-20.0, 0.0, 0.0, 0.0]).unwrap();
        let d = soft_argmin(&c, &[0.0, 1.0, 2.0, 3.0]).unwrap().item();
        // 6 e^-20 / (1 + 3 e^-20) ~ 1.2e-8
        assert!(d.abs() < 1e-6, "{d}");
    }

    #[test]
    fn level_mismatch_is_an_error() {
        let c = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let err = soft_argmin(&c, &[0.0, 1.0]).unwrap_err().to_string();
        assert!(err.contains("3 levels"), "{err}");
    }

    #[test]
    fn huge_costs_stay_finite() {
        let c = Tensor::<f32>::from_vec(&[2, 1, 1], vec![1e4, -1e4]).unwrap();
        let d = soft_argmin(&c, &[2.0, 7.0]).unwrap().item();
        assert_eq!(d, 7.0);
    }

    proptest! {
        #[test]
        fn convex_normalized_and_shift_invariant(
            costs in prop::collection::vec(-30.0f64..30.0, 5 * 6),
            shift in -100.0f64..100.0,
        ) {
            let hyps = [0.0, 1.5, 3.0, 4.5, 6.0];
            let c = Tensor::from_vec(&[1, 5, 2, 3], costs.clone()).unwrap();
            let p = disparity_probabilities(&c, &hyps).unwrap();
            for px in 0..6 {
                let s: f64 = (0..5).map(|i| p[i * 6 + px]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
            let d = soft_argmin(&c, &hyps).unwrap().to_vec();
            for &v in &d {
                prop_assert!((0.0..=6.0).contains(&v));
            }
            let shifted: Vec<f64> = (0..30).map(|k| costs[k] + if k % 6 == 2 { shift } else { 0.0 }).collect();
            let d2 = soft_argmin(&Tensor::from_vec(&[1, 5, 2, 3], shifted).unwrap(), &hyps).unwrap().to_vec();
            for (a, b) in d.iter().zip(&d2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
