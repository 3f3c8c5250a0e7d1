//! Elementwise arithmetic, reductions and shape manipulation.

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Splits `shape` around `axis` into (outer, axis extent, inner) block sizes.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize, op: &'static str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, out, _| {
                let xd = x.data();
                let gi = g
                    .iter()
                    .zip(xd.iter().zip(out))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(gi)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |v| -v, |_, _| -T::one())
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self) -> Tensor<T> {
        self.unary("abs", |v| v.abs(), |x, _| sign(x))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |v| v.exp(), |_, y| y)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |v| v * v, |x, _| x + x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary("sqrt", |v| v.sqrt(), |_, y| T::from_f64c(0.5) / y)
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (lo, hi) = (T::from_f64c(lo), T::from_f64c(hi));
        self.unary(
            "clamp",
            move |v| v.max(lo).min(hi),
            move |x, _| {
                if x > lo && x < hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64c(c);
        self.unary("add_scalar", move |v| v + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64c(c);
        self.unary("mul_scalar", move |v| v * c, move |_, _| c)
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        // Partial derivatives (d/da, d/db) at (a, b).
        df: impl Fn(T, T) -> (T, T) + Send + Sync + 'static,
    ) -> Result<Tensor<T>> {
        self.check_same_shape(other, op)?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, needs| {
                let (ad, bd) = (a.data(), b.data());
                let mut ga = needs[0].then(|| Vec::with_capacity(g.len()));
                let mut gb = needs[1].then(|| Vec::with_capacity(g.len()));
                for i in 0..g.len() {
                    let (da, db) = df(ad[i], bd[i]);
                    if let Some(ga) = ga.as_mut() {
                        ga.push(g[i] * da);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.push(g[i] * db);
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |_, _| (T::one(), T::one()))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |a, b| (T::one() / b, -a / (b * b)),
        )
    }

    /// Sum of all elements as a shape-`[]` scalar.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            Vec::new(),
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Sum over one axis. With `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis, "sum_axis")?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut()
                    .zip(&src[base..base + inner])
                    .for_each(|(d, &s)| *d = *d + s);
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Tensor::from_op(
            "sum_axis",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gi = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        gi[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis, "mean_axis")?;
        let len = self.shape()[axis] as f64;
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / len))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis, "narrow")?;
        let (outer, full, inner) = split_axis(self.shape(), axis);
        if len == 0 || start + len > full {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} outside extent {full}", start + len),
            ));
        }
        let src = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            "narrow",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gi = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gi[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        check_axis(first.shape(), axis, "concat")?;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!(
                        "extents {:?} and {:?} differ off axis {axis}",
                        first.shape(),
                        p.shape()
                    ),
                ));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (d, &len) in guards.iter().zip(&lens) {
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        drop(guards);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let inputs: Vec<Tensor<T>> = parts.iter().map(|&p| p.clone()).collect();
        Ok(Tensor::from_op(
            "concat",
            shape,
            out,
            inputs,
            Box::new(move |g, _, needs| {
                let mut grads: Vec<Option<Vec<T>>> = needs
                    .iter()
                    .zip(&lens)
                    .map(|(&n, &len)| n.then(|| Vec::with_capacity(outer * len * inner)))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gi, &len) in grads.iter_mut().zip(&lens) {
                        let chunk = &g[pos..pos + len * inner];
                        if let Some(gi) = gi.as_mut() {
                            gi.extend_from_slice(chunk);
                        }
                        pos += len * inner;
                    }
                }
                grads
            }),
        ))
    }

    /// Translates along `axis` by `offset` positions (`out[i] = in[i - offset]`),
    /// filling vacated positions with zeros.
    pub fn shift(&self, axis: usize, offset: isize) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis, "shift")?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        let copy = move |dst: &mut [T], from: &[T], reverse: bool| {
            for o in 0..outer {
                for i in 0..len {
                    let j = i as isize - offset;
                    if j < 0 || j >= len as isize {
                        continue;
                    }
                    let (a, b) = if reverse {
                        (j as usize, i)
                    } else {
                        (i, j as usize)
                    };
                    let d = (o * len + a) * inner;
                    let s = (o * len + b) * inner;
                    dst[d..d + inner].copy_from_slice(&from[s..s + inner]);
                }
            }
        };
        copy(&mut out, &src, false);
        drop(src);
        Ok(Tensor::from_op(
            "shift",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gi = vec![T::zero(); g.len()];
                copy(&mut gi, g, true);
                vec![Some(gi)]
            }),
        ))
    }

    /// Repeats a size-1 axis `n` times.
    pub fn expand(&self, axis: usize, n: usize) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis, "expand")?;
        if self.shape()[axis] != 1 || n == 0 {
            return Err(Error::shape(
                "expand",
                format!("axis {axis} of {:?} must have extent 1", self.shape()),
            ));
        }
        let (outer, _, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = n;
        Ok(Tensor::from_op(
            "expand",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gi = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for k in 0..n {
                        let s = (o * n + k) * inner;
                        gi[o * inner..(o + 1) * inner]
                            .iter_mut()
                            .zip(&g[s..s + inner])
                            .for_each(|(a, &b)| *a = *a + b);
                    }
                }
                vec![Some(gi)]
            }),
        ))
    }
}

#[inline]
pub(crate) fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
