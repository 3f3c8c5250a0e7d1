use crate::error::{Error, Result};
use crate::geometry::StereoSide;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Evenly spaced disparity hypotheses `disp(i) = d_min + i (d_max - d_min) / (D - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityHypotheses {
    values: Vec<f64>,
}

impl DisparityHypotheses {
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(d_max > d_min) {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 hypotheses over a non-empty range, got {count} over [{d_min}, {d_max}]"
            )));
        }
        let step = (d_max - d_min) / (count - 1) as f64;
        let values = (0..count).map(|i| d_min + i as f64 * step).collect();
        Ok(DisparityHypotheses { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Integer shifts (in half-resolution feature pixels) of the `D/2` volume
    /// levels, which span the same disparity range as the full set.
    pub fn feature_shifts(&self) -> Vec<usize> {
        let levels = self.values.len() / 2;
        let (lo, hi) = (self.min(), self.max());
        (0..levels)
            .map(|i| {
                let d = if levels > 1 {
                    lo + i as f64 * (hi - lo) / (levels - 1) as f64
                } else {
                    lo
                };
                (d / 2.0).round() as usize
            })
            .collect()
    }
}

/// Stacks `[1, 2F, L, h, w]` from features `[1, F, h, w]`. Level `i` pairs the
/// reference features with the other view translated by `shifts[i]` pixels:
/// to the right for the left volume, to the left for the right volume, with
/// zero fill.
pub fn build_feature_volume<T: Scalar>(
    f_ref: &Tensor<T>,
    f_other: &Tensor<T>,
    shifts: &[usize],
    side: StereoSide,
) -> Result<Tensor<T>> {
    if f_ref.shape() != f_other.shape() || f_ref.ndim() != 4 {
        return Err(Error::shape(
            "feature_volume",
            format!(
                "features must share a [1,F,h,w] shape, got {:?} and {:?}",
                f_ref.shape(),
                f_other.shape()
            ),
        ));
    }
    let &[n, f, h, w] = f_ref.shape() else {
        unreachable!()
    };
    let sign = match side {
        StereoSide::Left => 1,
        StereoSide::Right => -1,
    };
    let slices = shifts
        .iter()
        .map(|&k| {
            let moved = f_other.shift(3, sign * k as isize)?;
            Tensor::concat(&[f_ref, &moved], 1)?.reshape(&[n, 2 * f, 1, h, w])
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<T>> = slices.iter().collect();
    Tensor::concat(&refs, 2)
}
