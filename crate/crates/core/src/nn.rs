//! Trainable layers built on [`crate::tensor`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{
    batch_norm, conv2d, conv3d, conv_transpose3d, BnMode, ConvSpec, RunningStats, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    /// Trained by the optimizer.
    Param,
    /// Persistent but not trained (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct NamedTensor<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: StateKind,
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything owning parameters or buffers.
pub trait Module<T: Scalar> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>);

    /// Every parameter and buffer in a fixed, deterministic order.
    fn state(&self) -> Vec<NamedTensor<T>> {
        let mut out = Vec::new();
        self.collect_state("", &mut out);
        out
    }

    fn parameters(&self) -> Vec<NamedTensor<T>> {
        self.state()
            .into_iter()
            .filter(|s| s.kind == StateKind::Param)
            .collect()
    }

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.numel()).sum()
    }

    fn zero_grad(&self) {
        for p in self.parameters() {
            p.tensor.zero_grad();
        }
    }
}

/// Order of the activation and normalization after a convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    /// conv -> ReLU -> BN
    #[default]
    ReluThenBn,
    /// conv -> BN -> ReLU
    BnThenRelu,
}

/// Kaiming-uniform fan-in initialisation bound for ReLU networks.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn init_weight<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let b = kaiming_bound(fan_in);
    Tensor::uniform(shape, -b, b, rng).into_param()
}

/// 2D or 3D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv<T: Scalar> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel_volume();
        Conv {
            spec,
            weight: init_weight(&spec.weight_shape(), fan_in, rng),
            bias: Tensor::zeros(&[spec.out_channels]).into_param(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.spec.is_2d() && x.ndim() == 4 {
            conv2d(x, &self.spec, &self.weight, Some(&self.bias))
        } else {
            conv3d(x, &self.spec, &self.weight, Some(&self.bias))
        }
    }
}

impl<T: Scalar> Module<T> for Conv<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        out.push(NamedTensor {
            name: join(prefix, "weight"),
            tensor: self.weight.clone(),
            kind: StateKind::Param,
        });
        out.push(NamedTensor {
            name: join(prefix, "bias"),
            tensor: self.bias.clone(),
            kind: StateKind::Param,
        });
    }
}

/// 3D transposed convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvTranspose3d<T: Scalar> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvTranspose3d<T> {
    pub fn new(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel_volume();
        ConvTranspose3d {
            spec,
            weight: init_weight(&spec.transposed_weight_shape(), fan_in, rng),
            bias: Tensor::zeros(&[spec.out_channels]).into_param(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, output_size: [usize; 3]) -> Result<Tensor<T>> {
        conv_transpose3d(x, &self.spec, &self.weight, Some(&self.bias), output_size)
    }
}

impl<T: Scalar> Module<T> for ConvTranspose3d<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        out.push(NamedTensor {
            name: join(prefix, "weight"),
            tensor: self.weight.clone(),
            kind: StateKind::Param,
        });
        out.push(NamedTensor {
            name: join(prefix, "bias"),
            tensor: self.bias.clone(),
            kind: StateKind::Param,
        });
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::ones(&[channels]).into_param(),
            beta: Tensor::zeros(&[channels]).into_param(),
            stats: RunningStats::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        batch_norm(x, &self.gamma, &self.beta, &self.stats, mode)
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        for (name, tensor, kind) in [
            ("gamma", &self.gamma, StateKind::Param),
            ("beta", &self.beta, StateKind::Param),
            ("running_mean", &self.stats.mean, StateKind::Buffer),
            ("running_var", &self.stats.var, StateKind::Buffer),
        ] {
            out.push(NamedTensor {
                name: join(prefix, name),
                tensor: tensor.clone(),
                kind,
            });
        }
    }
}

/// Convolution followed by an optional ReLU and optional batch norm.
#[derive(Clone, Debug)]
pub struct ConvUnit<T: Scalar> {
    pub conv: Conv<T>,
    pub relu: bool,
    pub bn: Option<BatchNorm<T>>,
    pub order: NormOrder,
}

impl<T: Scalar> ConvUnit<T> {
    pub fn new(spec: ConvSpec, relu: bool, bn: bool, order: NormOrder, rng: &mut impl Rng) -> Self {
        ConvUnit {
            conv: Conv::new(spec, rng),
            relu,
            bn: bn.then(|| BatchNorm::new(spec.out_channels)),
            order,
        }
    }

    /// Plain linear convolution (no activation, no normalization).
    pub fn linear(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        Self::new(spec, false, false, NormOrder::default(), rng)
    }

    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x)?;
        activate(y, self.relu, self.bn.as_ref(), self.order, mode)
    }
}

impl<T: Scalar> Module<T> for ConvUnit<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        self.conv.collect_state(prefix, out);
        if let Some(bn) = &self.bn {
            bn.collect_state(&join(prefix, "bn"), out);
        }
    }
}

/// Transposed 3D convolution followed by an optional ReLU and batch norm.
#[derive(Clone, Debug)]
pub struct TransposedUnit<T: Scalar> {
    pub conv: ConvTranspose3d<T>,
    pub relu: bool,
    pub bn: Option<BatchNorm<T>>,
    pub order: NormOrder,
}

impl<T: Scalar> TransposedUnit<T> {
    pub fn new(spec: ConvSpec, relu: bool, bn: bool, order: NormOrder, rng: &mut impl Rng) -> Self {
        TransposedUnit {
            conv: ConvTranspose3d::new(spec, rng),
            relu,
            bn: bn.then(|| BatchNorm::new(spec.out_channels)),
            order,
        }
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        output_size: [usize; 3],
        mode: BnMode,
    ) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, output_size)?;
        activate(y, self.relu, self.bn.as_ref(), self.order, mode)
    }
}

impl<T: Scalar> Module<T> for TransposedUnit<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        self.conv.collect_state(prefix, out);
        if let Some(bn) = &self.bn {
            bn.collect_state(&join(prefix, "bn"), out);
        }
    }
}

fn activate<T: Scalar>(
    y: Tensor<T>,
    relu: bool,
    bn: Option<&BatchNorm<T>>,
    order: NormOrder,
    mode: BnMode,
) -> Result<Tensor<T>> {
    let r = |t: Tensor<T>| if relu { t.relu() } else { t };
    Ok(match (bn, order) {
        (None, _) => r(y),
        (Some(bn), NormOrder::ReluThenBn) => bn.forward(&r(y), mode)?,
        (Some(bn), NormOrder::BnThenRelu) => r(bn.forward(&y, mode)?),
    })
}

/// Two 3x3 convolutions with an identity skip around them. The second
/// activation is applied after the skip is added.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Scalar> {
    pub first: ConvUnit<T>,
    pub second: Conv<T>,
    pub second_bn: Option<BatchNorm<T>>,
    pub order: NormOrder,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(channels: usize, bn: bool, order: NormOrder, rng: &mut impl Rng) -> Self {
        let spec = ConvSpec::conv2d(channels, channels, 3, 1);
        ResidualBlock {
            first: ConvUnit::new(spec, true, bn, order, rng),
            second: Conv::new(spec, rng),
            second_bn: bn.then(|| BatchNorm::new(channels)),
            order,
        }
    }

    pub fn channels(&self) -> usize {
        self.second.spec.out_channels
    }

    /// Zeroes the second convolution so the block starts as `relu(x)`.
    pub fn zero_residual(&self) {
        self.second
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::zero());
        self.second
            .bias
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = T::zero());
    }

    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let h = self.first.forward(x, mode)?;
        let h = self.second.forward(&h)?;
        match (&self.second_bn, self.order) {
            (Some(bn), NormOrder::BnThenRelu) => Ok(bn.forward(&h, mode)?.add(x)?.relu()),
            (bn, _) => activate(h.add(x)?, true, bn.as_ref(), self.order, mode),
        }
    }
}

impl<T: Scalar> Module<T> for ResidualBlock<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        self.first.collect_state(&join(prefix, "conv_a"), out);
        self.second.collect_state(&join(prefix, "conv_b"), out);
        if let Some(bn) = &self.second_bn {
            bn.collect_state(&join(prefix, "conv_b.bn"), out);
        }
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<(String, M)> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        for (name, m) in self {
            m.collect_state(&join(prefix, name), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn residual_block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for bn in [false, true] {
            let block = ResidualBlock::<f32>::new(4, bn, NormOrder::ReluThenBn, &mut rng);
            let x = Tensor::uniform(&[1, 4, 7, 5], -1.0, 1.0, &mut rng);
            let y = block.forward(&x, BnMode::Train).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn state_names_are_hierarchical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = ResidualBlock::<f32>::new(2, true, NormOrder::ReluThenBn, &mut rng);
        let names: Vec<String> = block.state().into_iter().map(|s| s.name).collect();
        assert_eq!(
            names,
            [
                "conv_a.weight",
                "conv_a.bias",
                "conv_a.bn.gamma",
                "conv_a.bn.beta",
                "conv_a.bn.running_mean",
                "conv_a.bn.running_var",
                "conv_b.weight",
                "conv_b.bias",
                "conv_b.bn.gamma",
                "conv_b.bn.beta",
                "conv_b.bn.running_mean",
                "conv_b.bn.running_var",
            ]
        );
        assert_eq!(block.parameters().len(), 8);
        assert_eq!(block.param_count(), 2 * (2 * 2 * 9 + 2) + 4 * 2);
    }

    #[test]
    fn kaiming_init_is_bounded_and_seeded() {
        let spec = ConvSpec::conv2d(8, 4, 3, 1);
        let a = Conv::<f64>::new(spec, &mut ChaCha8Rng::seed_from_u64(9));
        let b = Conv::<f64>::new(spec, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.weight.to_vec(), b.weight.to_vec());
        let bound = (6.0f64 / 72.0).sqrt();
        assert!(a.weight.to_vec().iter().all(|v| v.abs() <= bound));
        assert!(a.bias.to_vec().iter().all(|&v| v == 0.0));
    }
}
