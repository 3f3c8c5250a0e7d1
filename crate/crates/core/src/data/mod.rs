//! Datasets: procedural stereo sequences with exact ground truth, the KITTI
//! odometry layout, five-frame window sampling and the rendering error metric.

mod eval;
mod kitti;
mod synthetic;
mod texture;

pub use eval::{evaluate, mean_abs_error_255, EvalReport};
pub use kitti::{parse_calib, parse_poses, write_kitti_sequence, KittiSequence};
pub use synthetic::{Plane, SceneConfig, SceneFrame, SyntheticScene};
pub use texture::ValueNoise;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap, Pose};
use crate::image::Image;

/// Random access to a rectified stereo sequence with camera-to-world poses
/// of the left camera.
pub trait StereoSequence {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn camera(&self) -> CameraModel;

    fn pose(&self, i: usize) -> Result<Pose>;

    fn left(&self, i: usize) -> Result<Image>;

    fn right(&self, i: usize) -> Result<Image>;

    /// Ground-truth depth of the left view, when known.
    fn gt_depth(&self, _i: usize) -> Option<DepthMap> {
        None
    }
}

/// Frame offsets of the four references, nearest first, earlier first on ties.
pub fn reference_offsets(spacing: usize) -> [isize; 4] {
    let s = spacing as isize;
    [-s, s, -2 * s, 2 * s]
}

/// Centers whose full window fits in a sequence of `len` frames.
pub fn eligible_centers(len: usize, spacing: usize) -> std::ops::Range<usize> {
    let r = 2 * spacing;
    if len < 2 * r + 1 {
        return 0..0;
    }
    r..len - r
}

/// Five-frame window: a target and four references with poses relative to
/// the target (mapping reference camera coordinates into the target frame).
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub target: usize,
    pub spacing: usize,
    pub references: Vec<usize>,
    pub relative_poses: Vec<Pose>,
}

/// Builds the window around `center`. Spacing 0 uses the target as its own
/// reference four times (a debugging mode).
pub fn sample_window(
    seq: &(impl StereoSequence + ?Sized),
    center: usize,
    spacing: usize,
) -> Result<SequenceSample> {
    let n = seq.len();
    let offsets = reference_offsets(spacing);
    let references = offsets
        .iter()
        .map(|&o| {
            let i = center as isize + o;
            if i < 0 || i >= n as isize {
                Err(Error::InvalidArgument(format!(
                    "window around frame {center} with spacing {spacing} needs frame {i}, sequence has {n}"
                )))
            } else {
                Ok(i as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let target_pose = seq.pose(center)?;
    let relative_poses = references
        .iter()
        .map(|&r| Ok(seq.pose(r)?.relative_to(&target_pose)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceSample {
        target: center,
        spacing,
        references,
        relative_poses,
    })
}
