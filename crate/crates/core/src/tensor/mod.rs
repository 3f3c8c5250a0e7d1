//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to an immutable shape plus a data
//! buffer. Tensors produced by differentiable operations remember their inputs
//! and a backward closure; [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates gradients into every reachable tensor
//! that requires them.

mod conv;
mod norm;
mod ops;
mod pool;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use conv::{conv2d, conv3d, conv_output_extent, conv_transpose3d, ConvSpec};
pub use norm::{batch_norm, BnMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pool::{avg_pool2d, box_filter2d, upsample_nearest2d};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph edges on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward closure: receives the output gradient, the output values and a
/// per-input flag telling which input gradients are wanted.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&[T], &[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

pub struct Tensor<T: Scalar = f32>(Arc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<T> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "from_vec",
                format!("zero extent in {shape:?}"),
            ));
        }
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!(
                    "shape {shape:?} needs {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.into_param())
    }

    /// Converts a constant into a fresh leaf that requires gradients.
    pub fn into_param(self) -> Self {
        let data = self.to_vec();
        Self::build(self.0.shape.clone(), data, true, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::from_f64c(rng.gen_range(lo..hi)))
            .collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Creates the output of a differentiable operation. A graph node is only
    /// attached when gradients are enabled and some input requires them.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            Self::build(
                shape,
                data,
                true,
                Some(Node {
                    op,
                    inputs,
                    backward,
                }),
            )
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True for tensors that were not produced by a recorded operation.
    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read()
    }

    /// Mutable access to the values; used by optimizers and running statistics.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<T>> {
        self.0.data.write()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor with shape {:?}", self.0.shape);
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.lock();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Copy of the values as a new constant, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// Converts element type, producing a constant.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64c(v.to_f64c()))
            .collect();
        Tensor::build(self.0.shape.clone(), data, false, None)
    }

    /// Back-propagates from this scalar, accumulating (`+=`) into the `grad`
    /// field of every reachable leaf that requires gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::InvalidArgument(
                "backward on a tensor that does not require gradients".into(),
            ));
        }

        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            let Some(node) = t.0.node.as_ref() else {
                t.accumulate_grad(&g);
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|i| i.requires_grad()).collect();
            let out = t.data();
            let input_grads = (node.backward)(&g, &out, &needs);
            drop(out);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for ((input, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (true, Some(gi)) = (*need, gi) else {
                    continue;
                };
                debug_assert_eq!(gi.len(), input.numel(), "op {} grad length", node.op);
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a = *a + b),
                    None => {
                        pending.insert(input.id(), gi);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tensors that require gradients (inputs before outputs).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((t, next)) = stack.pop() {
            let inputs =
                t.0.node
                    .as_ref()
                    .map(|n| n.inputs.as_slice())
                    .unwrap_or(&[]);
            if next < inputs.len() {
                let child = inputs[next].clone();
                stack.push((t, next + 1));
                if child.requires_grad() && visited.insert(child.id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("shape mismatch {:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::<f64>::param(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn square_sum_gives_twice_x() {
        let vals = vec![0.5, -1.5, 2.0, 3.25];
        let x = Tensor::<f64>::param(&[4], vals.clone()).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        let expected: Vec<f64> = vals.iter().map(|v| 2.0 * v).collect();
        assert_eq!(x.grad().unwrap(), expected);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::param(&[3], vec![1., 2., 3.]).unwrap();
        let loss = x.mul_scalar(2.0).sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0; 3]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::param(&[3], vec![1., 2., 3.]).unwrap();
        let err = x.mul_scalar(2.0).backward().unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn only_leaves_keep_grads() {
        let x = Tensor::<f64>::param(&[2], vec![1., -2.]).unwrap();
        let y = x.mul_scalar(3.0);
        let z = y.abs();
        z.sum().backward().unwrap();
        assert_eq!(y.grad(), None);
        assert_eq!(x.grad().unwrap(), vec![3.0, -3.0]);
    }

    #[test]
    fn shared_subexpression_gradients_add() {
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let y = x.mul_scalar(2.0);
        let loss = y.add(&y).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn no_grad_skips_graph() {
        let x = Tensor::<f32>::param(&[2], vec![1., 2.]).unwrap();
        let y = no_grad(|| x.mul_scalar(2.0));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
    }

    #[test]
    fn from_vec_validates() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(&[0, 2], vec![]).is_err());
        assert_eq!(Tensor::<f32>::scalar(1.0).numel(), 1);
    }
}
