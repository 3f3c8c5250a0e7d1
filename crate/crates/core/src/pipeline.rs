//! End-to-end rendering of a target frame from its reference window.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{sample_window, SequenceSample, StereoSequence};
use crate::depthnet::DepthNet;
use crate::error::{Error, Result};
use crate::geometry::{disparity_to_depth, forward_map, CameraModel, DepthMap, WarpedView};
use crate::image::Image;
use crate::inpaint::{median_fusion, stack_views, InpaintNet};
use crate::tensor::{no_grad, BnMode};

/// Disparity floor used when converting predictions to depth.
pub const DEFAULT_MIN_DISPARITY: f64 = 0.1;

/// Where reference depth comes from.
#[derive(Clone, Copy)]
pub enum DepthSource<'a> {
    GroundTruth,
    Network {
        net: &'a DepthNet<f32>,
        mode: BnMode,
        min_disparity: f64,
    },
}

/// Wall-clock seconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub depth: f64,
    pub warp: f64,
    pub inpaint: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.depth + self.warp + self.inpaint
    }
}

/// Left-view depth from a stereo pair.
pub fn predict_depth(
    net: &DepthNet<f32>,
    left: &Image,
    right: &Image,
    cam: &CameraModel,
    mode: BnMode,
    min_disparity: f64,
) -> Result<DepthMap> {
    let disp = no_grad(|| net.predict(&left.to_tensor(), &right.to_tensor(), mode))?;
    let d: Vec<f64> = disp.left.data().iter().map(|&v| v as f64).collect();
    Ok(disparity_to_depth(&d, left.height, left.width, cam, min_disparity)?.depth)
}

fn reference_depth(
    seq: &(impl StereoSequence + ?Sized),
    r: usize,
    left: &Image,
    source: DepthSource,
) -> Result<DepthMap> {
    match source {
        DepthSource::GroundTruth => seq
            .gt_depth(r)
            .ok_or_else(|| Error::InvalidArgument(format!("frame {r} has no ground-truth depth"))),
        DepthSource::Network {
            net,
            mode,
            min_disparity,
        } => predict_depth(
            net,
            left,
            &seq.right(r)?,
            &seq.camera(),
            mode,
            min_disparity,
        ),
    }
}

/// The target image and the four references forward-mapped into it.
#[derive(Clone, Debug)]
pub struct WarpedWindow {
    pub sample: SequenceSample,
    pub target: Image,
    pub views: Vec<WarpedView>,
    pub timings: StageTimings,
}

pub fn warp_window(
    seq: &(impl StereoSequence + ?Sized),
    center: usize,
    spacing: usize,
    source: DepthSource,
) -> Result<WarpedWindow> {
    let sample = sample_window(seq, center, spacing)?;
    let cam = seq.camera();
    let mut timings = StageTimings::default();
    let mut views = Vec::with_capacity(4);
    for (&r, pose) in sample.references.iter().zip(&sample.relative_poses) {
        let left = seq.left(r)?;
        let t = Instant::now();
        let depth = reference_depth(seq, r, &left, source)?;
        timings.depth += t.elapsed().as_secs_f64();
        let t = Instant::now();
        views.push(forward_map(&left, &depth, &cam, pose)?);
        timings.warp += t.elapsed().as_secs_f64();
    }
    Ok(WarpedWindow {
        target: seq.left(center)?,
        sample,
        views,
        timings,
    })
}

/// Inpainting output for a warped window, clamped to `[0, 1]`.
pub fn inpaint_window(net: &InpaintNet<f32>, views: &[WarpedView]) -> Result<Image> {
    let x = stack_views::<f32>(views)?;
    let y = no_grad(|| net.forward(&x, BnMode::Eval))?;
    Image::from_tensor(&y)
}

#[derive(Clone, Debug)]
pub struct Rendering {
    pub window: WarpedWindow,
    pub image: Image,
    /// Median of the warped views, for comparison.
    pub median: Image,
    pub holes: Vec<bool>,
}

pub fn render_window(
    seq: &(impl StereoSequence + ?Sized),
    center: usize,
    spacing: usize,
    source: DepthSource,
    inpaint: &InpaintNet<f32>,
) -> Result<Rendering> {
    let mut window = warp_window(seq, center, spacing, source)?;
    let t = Instant::now();
    let image = inpaint_window(inpaint, &window.views)?;
    window.timings.inpaint = t.elapsed().as_secs_f64();
    let (median, holes) = median_fusion(&window.views)?;
    Ok(Rendering {
        window,
        image,
        median,
        holes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{mean_abs_error_255, SceneConfig, SyntheticScene};
    use crate::depthnet::DepthNetConfig;
    use crate::inpaint::InpaintConfig;

    #[test]
    fn ground_truth_window_warps_onto_target() {
        let scene = SyntheticScene::generate(4, &SceneConfig::default()).unwrap();
        let w = warp_window(&scene, 2, 1, DepthSource::GroundTruth).unwrap();
        assert_eq!(w.views.len(), 4);
        let (median, holes) = median_fusion(&w.views).unwrap();
        assert!(holes.iter().filter(|&&h| h).count() < holes.len() / 20);
        let n = w.target.plane_len();
        let mut err = 0.0;
        let mut cnt = 0;
        for p in (0..n).filter(|&p| !holes[p]) {
            for c in 0..3 {
                err += (median.data[c * n + p] - w.target.data[c * n + p]).abs() as f64;
                cnt += 1;
            }
        }
        assert!(err / (cnt as f64) < 2.0 / 255.0);
    }

    #[test]
    fn identity_window_with_network_depth() {
        let scene = SyntheticScene::generate(1, &SceneConfig::default()).unwrap();
        let cfg = DepthNetConfig {
            feature_channels: 2,
            residual_blocks: 1,
            filter_channels: 2,
            disparities: 16,
            d_max: 15.0,
            ..DepthNetConfig::default()
        };
        let net = DepthNet::new(cfg, 0).unwrap();
        let inpaint = InpaintNet::new(
            InpaintConfig {
                base_channels: 4,
                tail_channels: 4,
                ..InpaintConfig::default()
            },
            0,
        )
        .unwrap();
        let source = DepthSource::Network {
            net: &net,
            mode: BnMode::Train,
            min_disparity: DEFAULT_MIN_DISPARITY,
        };
        let r = render_window(&scene, 2, 0, source, &inpaint).unwrap();
        // Spacing 0 maps the target onto itself, whatever the depth.
        assert!(r.holes.iter().all(|&h| !h));
        assert_eq!(
            mean_abs_error_255(&r.median, &r.window.target).unwrap(),
            0.0
        );
        assert!(r.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.window.timings.total() > 0.0);
    }

    #[test]
    fn missing_ground_truth_is_reported() {
        struct NoDepth(SyntheticScene);
        impl StereoSequence for NoDepth {
            fn len(&self) -> usize {
                self.0.len()
            }
            fn camera(&self) -> CameraModel {
                self.0.cam
            }
            fn pose(&self, i: usize) -> Result<crate::geometry::Pose> {
                self.0.pose(i)
            }
            fn left(&self, i: usize) -> Result<Image> {
                self.0.left(i)
            }
            fn right(&self, i: usize) -> Result<Image> {
                self.0.right(i)
            }
        }
        let s = NoDepth(SyntheticScene::generate(0, &SceneConfig::default()).unwrap());
        let err = warp_window(&s, 2, 1, DepthSource::GroundTruth).unwrap_err();
        assert!(err.to_string().contains("ground-truth"));
    }
}
