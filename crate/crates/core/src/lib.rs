//! Novel view synthesis from calibrated stereo sequences.
//!
//! The pipeline has two learned stages joined by fixed geometry:
//!
//! 1. [`depthnet`] predicts left/right disparity maps from a rectified stereo
//!    pair, trained without ground truth using the objectives in [`losses`].
//! 2. [`geometry`] converts disparities to depth and forward-maps reference
//!    views into the target camera with a z-buffer, leaving holes.
//! 3. [`inpaint`] fills the holes and fuses the warped views into the final
//!    rendering.
//!
//! Everything runs on the small reverse-mode autodiff engine in [`tensor`].

pub mod checkpoint;
pub mod data;
pub mod depthnet;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod inpaint;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
