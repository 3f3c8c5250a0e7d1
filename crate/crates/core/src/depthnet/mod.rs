//! Unsupervised stereo disparity network.
//!
//! A shared residual feature extractor runs on both images at half
//! resolution. Left and right feature volumes pair each view's features with
//! the other view's features translated over the disparity hypotheses. A
//! shared 3D encoder-decoder turns each volume into a full-resolution cost
//! volume and soft-argmin regresses a disparity per pixel.

mod features;
mod filter;
mod soft_argmin;
mod volume;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use features::FeatureExtractor;
pub use filter::FilterNet;
pub use soft_argmin::{disparity_probabilities, soft_argmin};
pub use volume::{build_feature_volume, DisparityHypotheses};

use crate::error::{Error, Result};
use crate::geometry::StereoSide;
use crate::nn::{Module, NamedTensor, NormOrder};
use crate::scalar::Scalar;
use crate::tensor::{BnMode, Tensor};

pub const MODEL_NAME: &str = "depthnet-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthNetConfig {
    pub in_channels: usize,
    pub feature_channels: usize,
    pub residual_blocks: usize,
    pub filter_channels: usize,
    /// Number of full-resolution disparity hypotheses `D`.
    pub disparities: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub norm_order: NormOrder,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        DepthNetConfig {
            in_channels: 3,
            feature_channels: 32,
            residual_blocks: 9,
            filter_channels: 32,
            disparities: 32,
            d_min: 0.0,
            d_max: 16.0,
            norm_order: NormOrder::ReluThenBn,
        }
    }
}

impl DepthNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.feature_channels == 0 || self.filter_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.disparities < 16 || self.disparities % 16 != 0 {
            return bad(format!(
                "disparities must be a positive multiple of 16 (D/2 levels divisible by 8), got {}",
                self.disparities
            ));
        }
        if !(self.d_min >= 0.0 && self.d_max > self.d_min) {
            return bad(format!(
                "need 0 <= d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            ));
        }
        Ok(())
    }

    pub fn hypotheses(&self) -> DisparityHypotheses {
        DisparityHypotheses::new(self.d_min, self.d_max, self.disparities)
            .expect("validated config")
    }

    /// Image extents must allow three stride-2 stages at half resolution.
    pub fn check_image(&self, h: usize, w: usize) -> Result<()> {
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "depthnet",
                format!("image {h}x{w}: height and width must be divisible by 16 (H/2 and W/2 divisible by 8)"),
            ));
        }
        Ok(())
    }
}

/// Left and right disparity maps, each `[1, H, W]`.
#[derive(Clone, Debug)]
pub struct Disparities<T: Scalar> {
    pub left: Tensor<T>,
    pub right: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DepthNet<T: Scalar> {
    pub cfg: DepthNetConfig,
    pub features: FeatureExtractor<T>,
    pub filter: FilterNet<T>,
    hyps: DisparityHypotheses,
}

impl<T: Scalar> DepthNet<T> {
    pub fn new(cfg: DepthNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = FeatureExtractor::new(&cfg, &mut rng);
        let filter = FilterNet::new(
            2 * cfg.feature_channels,
            cfg.filter_channels,
            cfg.norm_order,
            &mut rng,
        );
        let hyps = cfg.hypotheses();
        Ok(DepthNet {
            cfg,
            features,
            filter,
            hyps,
        })
    }

    pub fn hypotheses(&self) -> &DisparityHypotheses {
        &self.hyps
    }

    fn as_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        let (c, h, w) = match *s {
            [c, h, w] | [1, c, h, w] => (c, h, w),
            _ => {
                return Err(Error::shape(
                    "depthnet",
                    format!("image must be [C,H,W] or [1,C,H,W], got {s:?}"),
                ))
            }
        };
        if c != self.cfg.in_channels {
            return Err(Error::shape(
                "depthnet",
                format!(
                    "image has {c} channels, network expects {}",
                    self.cfg.in_channels
                ),
            ));
        }
        self.cfg.check_image(h, w)?;
        x.reshape(&[1, c, h, w])
    }

    /// Cost volume `[1, 1, D, H, W]` for the `side` view.
    pub fn cost_volume(
        &self,
        f_ref: &Tensor<T>,
        f_other: &Tensor<T>,
        side: StereoSide,
        mode: BnMode,
    ) -> Result<Tensor<T>> {
        let v = build_feature_volume(f_ref, f_other, &self.hyps.feature_shifts(), side)?;
        self.filter.forward(&v, mode)
    }

    pub fn predict(
        &self,
        x_l: &Tensor<T>,
        x_r: &Tensor<T>,
        mode: BnMode,
    ) -> Result<Disparities<T>> {
        let (l, r) = (self.as_batch(x_l)?, self.as_batch(x_r)?);
        if l.shape() != r.shape() {
            return Err(Error::shape(
                "depthnet",
                format!("stereo images differ: {:?} vs {:?}", l.shape(), r.shape()),
            ));
        }
        let (h, w) = (l.shape()[2], l.shape()[3]);
        let f_l = self.features.forward(&l, mode)?;
        let f_r = self.features.forward(&r, mode)?;
        let c_l = self.cost_volume(&f_l, &f_r, StereoSide::Left, mode)?;
        let c_r = self.cost_volume(&f_r, &f_l, StereoSide::Right, mode)?;
        let hyps = self.hyps.values();
        Ok(Disparities {
            left: soft_argmin(&c_l, hyps)?.reshape(&[1, h, w])?,
            right: soft_argmin(&c_r, hyps)?.reshape(&[1, h, w])?,
        })
    }
}

impl<T: Scalar> Module<T> for DepthNet<T> {
    fn collect_state(&self, prefix: &str, out: &mut Vec<NamedTensor<T>>) {
        self.features.collect_state(prefix, out);
        self.filter.collect_state(prefix, out);
    }
}
