//! Texture inpainting: fuses forward-mapped reference views (RGB + validity
//! mask each) into the target view.

mod median;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use median::median_fusion;

use crate::error::{Error, Result};
use crate::geometry::WarpedView;
use crate::nn::{join, ConvUnit, Module, NamedTensor, NormOrder, ResidualBlock};
use crate::scalar::Scalar;
use crate::tensor::{avg_pool2d, upsample_nearest2d, BnMode, ConvSpec, Tensor};

pub const MODEL_NAME: &str = "inpaintnet-v1";
pub const CONV_MODEL_NAME: &str = "inpaintnet-conv-v1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Residual blocks throughout.
    #[default]
    Residual,
    /// Each residual block replaced by one convolution of the same shape.
    Conv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Linear output, clamped to `[0, 1]` when rendering.
    #[default]
    Clamp,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    /// Number of reference views `V`; the input has `4V` channels.
    pub views: usize,
    /// Width of block 0 (`conv_0`, `res_1`).
    pub base_channels: usize,
    /// Width of `conv_12`.
    pub tail_channels: usize,
    pub batch_norm: bool,
    pub norm_order: NormOrder,
    pub output: OutputActivation,
    pub variant: Variant,
    /// Start every residual block at identity by zeroing its second
    /// convolution.
    pub zero_init_residual: bool,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            views: 4,
            base_channels: 32,
            tail_channels: 16,
            batch_norm: false,
            norm_order: NormOrder::ReluThenBn,
            output: OutputActivation::Clamp,
            variant: Variant::Residual,
            zero_init_residual: true,
        }
    }
}

impl InpaintConfig {
    pub fn input_channels(&self) -> usize {
        4 * self.views
    }

    /// Width of blocks 1 and 2: pooled `res_1` concatenated with the pooled input.
    pub fn mid_channels(&self) -> usize {
        self.base_channels + self.input_channels()
    }

    pub fn model_name(&self) -> &'static str {
        match self.variant {
            Variant::Residual => MODEL_NAME,
            Variant::Conv => CONV_MODEL_NAME,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.base_channels == 0 || self.tail_channels == 0 {
            return Err(Error::Config(
                "inpaint views and channel counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A residual block, or its single-convolution stand-in.
#[derive(Clone, Debug)]
pub enum Body<T: Scalar> {
    Residual(ResidualBlock<T>),
    Conv(ConvUnit<T>),
}

impl<T: Scalar> Body<T> {
    fn new(cfg: &InpaintConfig, channels: usize, rng: &mut impl Rng) -> Self {
        match cfg.variant {
            Variant::Residual => Body::Residual(ResidualBlock::new(
                channels,
                cfg.batch_norm,
                cfg.norm_order,
                rng,
            )),
            Variant::Conv => Body::Conv(ConvUnit::new(
                ConvSpec::conv2d(channels, channels, 3, 1),
                true,
                cfg.batch_norm,
                cfg.norm_order,
                rng,
            )),
        }
    }

    fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        match self {
            Body::Residual(b) => b.forward(x, mode),
            Body::Conv(c) => c.forward(x, mode),
        }
    }
}

impl<T: Scalar> Module<T> for Body<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        match self {
            Body::Residual(b) => b.collect_state(prefix, out),
            Body::Conv(c) => c.collect_state(prefix, out),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InpaintNet<T: Scalar> {
    pub cfg: InpaintConfig,
    pub conv_0: ConvUnit<T>,
    pub res_1: Body<T>,
    /// `res_2..res_8` at half resolution.
    pub block1: Vec<(String, Body<T>)>,
    pub conv_9: ConvUnit<T>,
    pub res_10: Body<T>,
    pub res_11: Body<T>,
    pub conv_12: ConvUnit<T>,
    pub output: ConvUnit<T>,
}

impl<T: Scalar> InpaintNet<T> {
    pub fn new(cfg: InpaintConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, b, m, t) = (
            cfg.input_channels(),
            cfg.base_channels,
            cfg.mid_channels(),
            cfg.tail_channels,
        );
        let unit = |cin, cout, rng: &mut ChaCha8Rng| {
            ConvUnit::new(
                ConvSpec::conv2d(cin, cout, 3, 1),
                true,
                cfg.batch_norm,
                cfg.norm_order,
                rng,
            )
        };
        let conv_0 = unit(i, b, &mut rng);
        let res_1 = Body::new(&cfg, b, &mut rng);
        let block1 = (2..=8)
            .map(|k| (format!("res_{k}"), Body::new(&cfg, m, &mut rng)))
            .collect();
        let conv_9 = unit(m + b, m, &mut rng);
        let res_10 = Body::new(&cfg, m, &mut rng);
        let res_11 = Body::new(&cfg, m, &mut rng);
        let conv_12 = unit(m, t, &mut rng);
        let output = ConvUnit::linear(ConvSpec::conv2d(t, 3, 3, 1), &mut rng);
        let net = InpaintNet {
            cfg,
            conv_0,
            res_1,
            block1,
            conv_9,
            res_10,
            res_11,
            conv_12,
            output,
        };
        if net.cfg.zero_init_residual {
            for b in net.bodies() {
                if let Body::Residual(r) = b {
                    r.zero_residual();
                }
            }
        }
        Ok(net)
    }

    fn bodies(&self) -> impl Iterator<Item = &Body<T>> {
        [&self.res_1, &self.res_10, &self.res_11]
            .into_iter()
            .chain(self.block1.iter().map(|(_, b)| b))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = self.cfg.input_channels();
        match *x.shape() {
            [1, c, h, w] if c == want && h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 => Ok(()),
            [1, c, _, _] if c != want => Err(Error::shape(
                "inpaint",
                format!(
                    "input has {c} channels, expected 4V = {want} for V = {} views",
                    self.cfg.views
                ),
            )),
            ref s => Err(Error::shape(
                "inpaint",
                format!("input must be [1, {want}, H, W] with even H and W, got {s:?}"),
            )),
        }
    }

    /// Output before the final activation, `[1, 3, H, W]`.
    pub fn forward_linear(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let h0 = self.conv_0.forward(x, mode)?;
        let r1 = self.res_1.forward(&h0, mode)?;
        let mut h = Tensor::concat(&[&avg_pool2d(&r1)?, &avg_pool2d(x)?], 1)?;
        for (_, b) in &self.block1 {
            h = b.forward(&h, mode)?;
        }
        let h = Tensor::concat(&[&upsample_nearest2d(&h)?, &r1], 1)?;
        let h = self.conv_9.forward(&h, mode)?;
        let h = self.res_10.forward(&h, mode)?;
        let h = self.res_11.forward(&h, mode)?;
        let h = self.conv_12.forward(&h, mode)?;
        self.output.forward(&h, mode)
    }

    /// Output the loss is computed on: linear for the clamp head (clamping
    /// can only move a prediction toward a target in `[0, 1]`), sigmoid
    /// otherwise.
    pub fn forward_train(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let y = self.forward_linear(x, mode)?;
        Ok(match self.cfg.output {
            OutputActivation::Clamp => y,
            OutputActivation::Sigmoid => y.sigmoid(),
        })
    }

    /// Final rendering in `[0, 1]`.
    pub fn forward(&self, x: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let y = self.forward_linear(x, mode)?;
        Ok(match self.cfg.output {
            OutputActivation::Clamp => y.clamp(0.0, 1.0),
            OutputActivation::Sigmoid => y.sigmoid(),
        })
    }
}

impl<T: Scalar> Module<T> for InpaintNet<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        self.conv_0.collect_state(&join(prefix, "conv_0"), out);
        self.res_1.collect_state(&join(prefix, "res_1"), out);
        self.block1.collect_state(prefix, out);
        self.conv_9.collect_state(&join(prefix, "conv_9"), out);
        self.res_10.collect_state(&join(prefix, "res_10"), out);
        self.res_11.collect_state(&join(prefix, "res_11"), out);
        self.conv_12.collect_state(&join(prefix, "conv_12"), out);
        self.output.collect_state(&join(prefix, "output"), out);
    }
}

/// Stacks views as `[1, 4V, H, W]`: per view R, G, B, mask.
pub fn stack_views<T: Scalar>(views: &[WarpedView]) -> Result<Tensor<T>> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidArgument("no views to stack".into()))?;
    let (h, w) = (first.rgb.height, first.rgb.width);
    let n = h * w;
    let mut data = Vec::with_capacity(4 * views.len() * n);
    for v in views {
        if v.rgb.channels != 3 || v.rgb.height != h || v.rgb.width != w {
            return Err(Error::shape(
                "stack_views",
                format!(
                    "view {}x{}x{} differs from 3x{h}x{w}",
                    v.rgb.channels, v.rgb.height, v.rgb.width
                ),
            ));
        }
        data.extend(v.rgb.data.iter().map(|&x| T::from_f64c(x as f64)));
        data.extend(v.mask.iter().map(|&m| if m { T::one() } else { T::zero() }));
    }
    Tensor::from_vec(&[1, 4 * views.len(), h, w], data)
}
