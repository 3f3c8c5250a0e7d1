//! Unsupervised stereo objective and the inpainting reconstruction loss.
//!
//! Images are `[C, H, W]` tensors with values in `[0, 1]`; disparities are
//! `[1, H, W]`. Masks are per-pixel `H x W` flags marking where a warped
//! value is trusted.

use serde::{Deserialize, Serialize};

use crate::depthnet::Disparities;
use crate::error::{Error, Result};
use crate::geometry::{warp_stereo, StereoSide, WarpConvention};
use crate::scalar::Scalar;
use crate::tensor::{box_filter2d, Tensor};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Photometric term.
    pub lambda0: f64,
    /// Left-right consistency term.
    pub lambda1: f64,
    /// Smoothness term.
    pub lambda2: f64,
    /// L1 weight inside the photometric term.
    pub l1: f64,
    pub ssim3: f64,
    pub ssim5: f64,
    pub ssim7: f64,
    /// Drop a one-pixel border and clamped samples from warped terms.
    pub mask_borders: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda0: 5.0,
            lambda1: 0.01,
            lambda2: 0.0005,
            l1: 0.2,
            ssim3: 0.8,
            ssim5: 0.2,
            ssim7: 0.2,
            mask_borders: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda0,
            self.lambda1,
            self.lambda2,
            self.l1,
            self.ssim3,
            self.ssim5,
            self.ssim7,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn ssim_terms(&self) -> [(usize, f64); 3] {
        [(3, self.ssim3), (5, self.ssim5), (7, self.ssim7)]
    }

    pub fn scaled(&self, c: f64) -> LossWeights {
        LossWeights {
            lambda0: self.lambda0 * c,
            lambda1: self.lambda1 * c,
            lambda2: self.lambda2 * c,
            ..self.clone()
        }
    }
}

fn dims<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(
            "loss",
            format!("{what} must be [C,H,W], got {s:?}"),
        )),
    }
}

fn same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "loss",
            format!("shape mismatch {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Per-pixel SSIM over `window x window` uniform windows, valid placement:
/// `[C, H, W]` -> `[C, H - window + 1, W - window + 1]`.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    same(a, b)?;
    if window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "SSIM window must be odd, got {window}"
        )));
    }
    let mu_a = box_filter2d(a, window)?;
    let mu_b = box_filter2d(b, window)?;
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = box_filter2d(&a.square(), window)?.sub(&mu_aa)?;
    let var_b = box_filter2d(&b.square(), window)?.sub(&mu_bb)?;
    let cov = box_filter2d(&a.mul(b)?, window)?.sub(&mu_ab)?;
    let num = mu_ab
        .mul_scalar(2.0)
        .add_scalar(SSIM_C1)
        .mul(&cov.mul_scalar(2.0).add_scalar(SSIM_C2))?;
    let den = mu_aa
        .add(&mu_bb)?
        .add_scalar(SSIM_C1)
        .mul(&var_a.add(&var_b)?.add_scalar(SSIM_C2))?;
    num.div(&den)
}

/// Validity of each pixel of a stereo reconstruction: the sample stayed in
/// bounds and, if requested, the pixel is off the one-pixel border.
pub fn warp_validity(in_bounds: &[bool], h: usize, w: usize, mask_borders: bool) -> Vec<bool> {
    if !mask_borders {
        return vec![true; h * w];
    }
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            in_bounds[i] && y > 0 && x > 0 && y + 1 < h && x + 1 < w
        })
        .collect()
}

fn mask_tensor<T: Scalar>(mask: &[bool], c: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let data = (0..c * h * w)
        .map(|i| {
            if mask[i % (h * w)] {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(&[c, h, w], data)
}

/// Mean of `x` (`[C, H, W]`) over the entries whose pixel is flagged.
/// Returns 0 when no pixel is flagged.
pub fn masked_mean<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let (c, h, w) = dims(x, "masked input")?;
    let Some(mask) = mask else {
        return Ok(x.mean());
    };
    if mask.len() != h * w {
        return Err(Error::shape(
            "loss",
            format!("mask has {} entries for a {h}x{w} image", mask.len()),
        ));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(x.sum().mul_scalar(0.0));
    }
    Ok(x.mul(&mask_tensor(mask, c, h, w)?)?
        .sum()
        .mul_scalar(1.0 / (count * c) as f64))
}

/// Windows (valid placement) whose every pixel is flagged.
fn window_mask(mask: &[bool], h: usize, w: usize, k: usize) -> Vec<bool> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    (0..oh * ow)
        .map(|i| {
            let (y, x) = (i / ow, i % ow);
            (0..k).all(|a| (0..k).all(|b| mask[(y + a) * w + x + b]))
        })
        .collect()
}

/// Mean of `(1 - SSIM) / 2` over windows fully inside the mask.
pub fn dssim<T: Scalar>(
    recon: &Tensor<T>,
    target: &Tensor<T>,
    window: usize,
    mask: Option<&[bool]>,
) -> Result<Tensor<T>> {
    let (_, h, w) = dims(target, "image")?;
    let d = ssim(recon, target, window)?
        .neg()
        .add_scalar(1.0)
        .mul_scalar(0.5);
    match mask {
        None => Ok(d.mean()),
        Some(m) => masked_mean(&d, Some(&window_mask(m, h, w, window))),
    }
}

/// One side of the photometric term: `l1 * mean|recon - target| +
/// sum_s lambda_s * mean DSSIM_s`.
pub fn photometric_side<T: Scalar>(
    recon: &Tensor<T>,
    target: &Tensor<T>,
    mask: Option<&[bool]>,
    w: &LossWeights,
) -> Result<Tensor<T>> {
    same(recon, target)?;
    let mut loss = masked_mean(&recon.sub(target)?.abs(), mask)?.mul_scalar(w.l1);
    for (s, lam) in w.ssim_terms() {
        if lam != 0.0 {
            loss = loss.add(&dssim(recon, target, s, mask)?.mul_scalar(lam))?;
        }
    }
    Ok(loss)
}

/// Photometric loss summed over both views.
pub fn photometric_loss<T: Scalar>(
    x_l: &Tensor<T>,
    x_r: &Tensor<T>,
    recon_l: &Tensor<T>,
    recon_r: &Tensor<T>,
    masks: Option<(&[bool], &[bool])>,
    w: &LossWeights,
) -> Result<Tensor<T>> {
    let (ml, mr) = masks.map_or((None, None), |(a, b)| (Some(a), Some(b)));
    photometric_side(recon_l, x_l, ml, w)?.add(&photometric_side(recon_r, x_r, mr, w)?)
}

/// `mean|Φ(D_R, D_L) - D_L| + mean|Φ(D_L, D_R) - D_R|`, each disparity map
/// warped into the other view with that view's own disparity.
pub fn lr_consistency_loss<T: Scalar>(
    d_l: &Tensor<T>,
    d_r: &Tensor<T>,
    convention: WarpConvention,
    mask_borders: bool,
) -> Result<Tensor<T>> {
    same(d_l, d_r)?;
    let (_, h, w) = dims(d_l, "disparity")?;
    let (from_r, ok_l) = warp_stereo(d_r, d_l, StereoSide::Left, convention)?;
    let (from_l, ok_r) = warp_stereo(d_l, d_r, StereoSide::Right, convention)?;
    let ml = warp_validity(&ok_l, h, w, mask_borders);
    let mr = warp_validity(&ok_r, h, w, mask_borders);
    let masks = mask_borders.then_some((ml, mr));
    let (ml, mr) = masks
        .as_ref()
        .map_or((None, None), |(a, b)| (Some(&a[..]), Some(&b[..])));
    masked_mean(&from_r.sub(d_l)?.abs(), ml)?.add(&masked_mean(&from_l.sub(d_r)?.abs(), mr)?)
}

/// Edge-aware smoothness: `mean(|dx D| exp(-|dx X|)) + mean(|dy D| exp(-|dy X|))`
/// with forward differences and channel-averaged image gradients.
pub fn smoothness_loss<T: Scalar>(d: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = dims(d, "disparity")?;
    let (_, xh, xw) = dims(x, "image")?;
    if (h, w) != (xh, xw) {
        return Err(Error::shape(
            "smoothness",
            format!("disparity {h}x{w} vs image {xh}x{xw}"),
        ));
    }
    let diff = |t: &Tensor<T>, axis: usize, n: usize| -> Result<Tensor<T>> {
        t.narrow(axis, 1, n - 1)?.sub(&t.narrow(axis, 0, n - 1)?)
    };
    let mut total: Option<Tensor<T>> = None;
    for (axis, n) in [(2, w), (1, h)] {
        if n < 2 {
            continue;
        }
        let gd = diff(d, axis, n)?.abs();
        let gx = diff(x, axis, n)?.abs().mean_axis(0, true)?;
        let term = gd.mul(&gx.neg().exp())?.mean();
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.unwrap_or_else(|| d.sum().mul_scalar(0.0)))
}

/// The three scalar parts of the depth objective.
#[derive(Clone, Debug)]
pub struct LossParts<T: Scalar> {
    pub photometric: Tensor<T>,
    pub lr: Tensor<T>,
    pub smoothness: Tensor<T>,
}

/// `lambda0 L_P + lambda1 L_LR + lambda2 L_S`.
pub fn total_loss<T: Scalar>(parts: &LossParts<T>, w: &LossWeights) -> Result<Tensor<T>> {
    parts
        .photometric
        .mul_scalar(w.lambda0)
        .add(&parts.lr.mul_scalar(w.lambda1))?
        .add(&parts.smoothness.mul_scalar(w.lambda2))
}

/// Full unsupervised objective for one stereo pair and its predicted
/// disparities. Returns the total and its parts.
pub fn depth_objective<T: Scalar>(
    x_l: &Tensor<T>,
    x_r: &Tensor<T>,
    disp: &Disparities<T>,
    w: &LossWeights,
    convention: WarpConvention,
) -> Result<(Tensor<T>, LossParts<T>)> {
    let (_, h, wd) = dims(x_l, "left image")?;
    let (recon_l, ok_l) = warp_stereo(x_r, &disp.left, StereoSide::Left, convention)?;
    let (recon_r, ok_r) = warp_stereo(x_l, &disp.right, StereoSide::Right, convention)?;
    let ml = warp_validity(&ok_l, h, wd, w.mask_borders);
    let mr = warp_validity(&ok_r, h, wd, w.mask_borders);
    let masks = w.mask_borders.then_some((&ml[..], &mr[..]));
    let parts = LossParts {
        photometric: photometric_loss(x_l, x_r, &recon_l, &recon_r, masks, w)?,
        lr: lr_consistency_loss(&disp.left, &disp.right, convention, w.mask_borders)?,
        smoothness: smoothness_loss(&disp.left, x_l)?.add(&smoothness_loss(&disp.right, x_r)?)?,
    };
    Ok((total_loss(&parts, w)?, parts))
}

/// Mean absolute error over all pixels and channels.
pub fn inpaint_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same(pred, target)?;
    Ok(pred.sub(target)?.abs().mean())
}
