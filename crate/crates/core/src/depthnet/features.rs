use rand::Rng;

use super::DepthNetConfig;
use crate::error::Result;
use crate::nn::{ConvUnit, Module, NamedTensor, ResidualBlock};
use crate::scalar::Scalar;
use crate::tensor::{BnMode, ConvSpec, Tensor};

/// `conv_0` (5x5, stride 2, ReLU) -> `res_1..res_n` -> `conv_10` (3x3, linear).
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T: Scalar> {
    pub conv_0: ConvUnit<T>,
    pub res: Vec<(String, ResidualBlock<T>)>,
    pub conv_10: ConvUnit<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(cfg: &DepthNetConfig, rng: &mut impl Rng) -> Self {
        let f = cfg.feature_channels;
        let conv_0 = ConvUnit::new(
            ConvSpec::conv2d(cfg.in_channels, f, 5, 2),
            true,
            false,
            cfg.norm_order,
            rng,
        );
        let res = (1..=cfg.residual_blocks)
            .map(|i| {
                (
                    format!("res_{i}"),
                    ResidualBlock::new(f, true, cfg.norm_order, rng),
                )
            })
            .collect();
        let conv_10 = ConvUnit::linear(ConvSpec::conv2d(f, f, 3, 1), rng);
        FeatureExtractor {
            conv_0,
            res,
            conv_10,
        }
    }

    /// `[1, C, H, W]` -> `[1, F, H/2, W/2]`.
    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let mut h = self.conv_0.forward(x, mode)?;
        for (_, block) in &self.res {
            h = block.forward(&h, mode)?;
        }
        self.conv_10.forward(&h, mode)
    }
}

impl<T: Scalar> Module<T> for FeatureExtractor<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        self.conv_0
            .collect_state(&crate::nn::join(prefix, "conv_0"), out);
        self.res.collect_state(prefix, out);
        self.conv_10
            .collect_state(&crate::nn::join(prefix, "conv_10"), out);
    }
}
