//! Spatial pooling, upsampling and box filtering over the two trailing axes.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn planes(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(
            op,
            format!("need at least 2 axes, got {shape:?}"),
        ));
    }
    let n = shape.len();
    Ok((shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1]))
}

fn with_hw(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = h;
    s[n - 1] = w;
    s
}

/// 2x2 average pooling with stride 2.
pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "avg_pool2d";
    let (p, h, w) = planes(x.shape(), OP)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(OP, format!("extents {h}x{w} must be even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64c(0.25);
    let src = x.data();
    let mut out = vec![T::zero(); p * oh * ow];
    for pl in 0..p {
        for i in 0..oh {
            for j in 0..ow {
                let s = pl * h * w + 2 * i * w + 2 * j;
                out[(pl * oh + i) * ow + j] =
                    (src[s] + src[s + 1] + src[s + w] + src[s + w + 1]) * quarter;
            }
        }
    }
    drop(src);
    Ok(Tensor::from_op(
        OP,
        with_hw(x.shape(), oh, ow),
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gi = vec![T::zero(); p * h * w];
            for pl in 0..p {
                for i in 0..oh {
                    for j in 0..ow {
                        let v = g[(pl * oh + i) * ow + j] * quarter;
                        let s = pl * h * w + 2 * i * w + 2 * j;
                        gi[s] = v;
                        gi[s + 1] = v;
                        gi[s + w] = v;
                        gi[s + w + 1] = v;
                    }
                }
            }
            vec![Some(gi)]
        }),
    ))
}

/// Nearest-neighbour upsampling by a factor of 2.
pub fn upsample_nearest2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "upsample_nearest2d";
    let (p, h, w) = planes(x.shape(), OP)?;
    let (oh, ow) = (h * 2, w * 2);
    let src = x.data();
    let mut out = vec![T::zero(); p * oh * ow];
    for pl in 0..p {
        for i in 0..oh {
            for j in 0..ow {
                out[(pl * oh + i) * ow + j] = src[(pl * h + i / 2) * w + j / 2];
            }
        }
    }
    drop(src);
    Ok(Tensor::from_op(
        OP,
        with_hw(x.shape(), oh, ow),
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gi = vec![T::zero(); p * h * w];
            for pl in 0..p {
                for i in 0..oh {
                    for j in 0..ow {
                        let d = (pl * h + i / 2) * w + j / 2;
                        gi[d] = gi[d] + g[(pl * oh + i) * ow + j];
                    }
                }
            }
            vec![Some(gi)]
        }),
    ))
}

/// Mean over every fully contained `k x k` window ("valid" placement), so
/// the output extents are `(H - k + 1) x (W - k + 1)`.
pub fn box_filter2d<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    const OP: &str = "box_filter2d";
    let (p, h, w) = planes(x.shape(), OP)?;
    if k == 0 || k > h || k > w {
        return Err(Error::shape(OP, format!("window {k} does not fit {h}x{w}")));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let norm = T::one() / T::from_usize(k * k).unwrap();
    let src = x.data();
    let mut out = vec![T::zero(); p * oh * ow];
    for pl in 0..p {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::zero();
                for a in 0..k {
                    let row = pl * h * w + (i + a) * w + j;
                    acc = src[row..row + k].iter().fold(acc, |s, &v| s + v);
                }
                out[(pl * oh + i) * ow + j] = acc * norm;
            }
        }
    }
    drop(src);
    Ok(Tensor::from_op(
        OP,
        with_hw(x.shape(), oh, ow),
        out,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            let mut gi = vec![T::zero(); p * h * w];
            for pl in 0..p {
                for i in 0..oh {
                    for j in 0..ow {
                        let v = g[(pl * oh + i) * ow + j] * norm;
                        for a in 0..k {
                            let row = pl * h * w + (i + a) * w + j;
                            gi[row..row + k].iter_mut().for_each(|s| *s = *s + v);
                        }
                    }
                }
            }
            vec![Some(gi)]
        }),
    ))
}
