//! Non-learned geometry: cameras, poses, backward (bilinear) warping and
//! z-buffered forward mapping.
//!
//! Pixel coordinates are homogeneous vectors `[x, y, 1]` with `x` the column
//! and `y` the row, both measured from the center of the top-left pixel. A
//! [`Pose`] maps points from a reference camera frame into the target frame:
//! `X_t = R X_r + T`.

mod camera;
mod forward;
mod sample;

pub use camera::{CameraModel, Pose};
pub use forward::{
    disparity_to_depth, forward_map, warp_reference_set, DepthConversion, DepthMap, ForwardStats,
    ReferenceView, WarpedView, FLOOR_GUARD,
};
pub use sample::{
    bilinear_sample, bilinear_sample_masked, warp_stereo, StereoSide, WarpConvention,
};
