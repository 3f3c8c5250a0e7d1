use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Mean absolute brightness error on the `[0, 255]` scale.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_error: f64,
    pub frame_errors: Vec<f64>,
    /// Fraction of target pixels that no warped reference covered, per frame.
    pub hole_fractions: Vec<f64>,
}

impl EvalReport {
    pub fn frames(&self) -> usize {
        self.frame_errors.len()
    }

    pub fn mean_hole_fraction(&self) -> Option<f64> {
        (!self.hole_fractions.is_empty())
            .then(|| self.hole_fractions.iter().sum::<f64>() / self.hole_fractions.len() as f64)
    }

    /// Attaches per-frame hole masks (`true` = hole).
    pub fn with_holes(mut self, holes: &[Vec<bool>]) -> Result<Self> {
        if holes.len() != self.frame_errors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} hole masks for {} frames",
                holes.len(),
                self.frame_errors.len()
            )));
        }
        self.hole_fractions = holes
            .iter()
            .map(|m| m.iter().filter(|&&h| h).count() as f64 / m.len().max(1) as f64)
            .collect();
        Ok(self)
    }
}

/// Per-pixel, per-channel mean of `|render - target|`, both scaled to `[0, 255]`.
pub fn mean_abs_error_255(render: &Image, target: &Image) -> Result<f64> {
    if !render.same_dims(target) {
        return Err(Error::InvalidArgument(format!(
            "render {}x{}x{} vs target {}x{}x{}",
            render.channels,
            render.height,
            render.width,
            target.channels,
            target.height,
            target.width
        )));
    }
    if target.data.is_empty() {
        return Err(Error::Empty("empty image".into()));
    }
    let sum: f64 = render
        .data
        .iter()
        .zip(&target.data)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(255.0 * sum / target.data.len() as f64)
}

pub fn evaluate(renders: &[Image], targets: &[Image]) -> Result<EvalReport> {
    if renders.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} renders for {} targets",
            renders.len(),
            targets.len()
        )));
    }
    if renders.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let frame_errors = renders
        .iter()
        .zip(targets)
        .map(|(r, t)| mean_abs_error_255(r, t))
        .collect::<Result<Vec<_>>>()?;
    let mean_error = frame_errors.iter().sum::<f64>() / frame_errors.len() as f64;
    Ok(EvalReport {
        mean_error,
        frame_errors,
        hole_fractions: Vec::new(),
    })
}
