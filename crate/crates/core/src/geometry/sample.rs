use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interpolation footprint of one output pixel.
#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: f64,
    wy: f64,
    clamped_x: bool,
    clamped_y: bool,
}

fn tap(x: f64, y: f64, h: usize, w: usize) -> Tap {
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let xc = x.clamp(0.0, xmax);
    let yc = y.clamp(0.0, ymax);
    // Lower corner stays one short of the last pixel so the right/bottom edge
    // is reached with weight 1 and keeps a one-sided derivative.
    let x0 = (xc.floor() as usize).min(w.saturating_sub(2));
    let y0 = (yc.floor() as usize).min(h.saturating_sub(2));
    Tap {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        wx: xc - x0 as f64,
        wy: yc - y0 as f64,
        clamped_x: !(0.0..=xmax).contains(&x),
        clamped_y: !(0.0..=ymax).contains(&y),
    }
}

/// Bilinear sampling `Φ(img, grid)` with border clamping.
///
/// `img` is `[C, H, W]`; `grid` is `[2, Ho, Wo]` holding absolute source
/// coordinates (channel 0 = x/column, channel 1 = y/row). Output is
/// `[C, Ho, Wo]`. Gradients flow to both `img` and `grid`; the grid gradient is
/// zero along an axis whose coordinate was clamped.
pub fn bilinear_sample<T: Scalar>(img: &Tensor<T>, grid: &Tensor<T>) -> Result<Tensor<T>> {
    bilinear_sample_masked(img, grid).map(|(t, _)| t)
}

/// As [`bilinear_sample`], also returning per-output-pixel flags that are
/// `true` where the coordinate lay inside the image (no clamping).
pub fn bilinear_sample_masked<T: Scalar>(
    img: &Tensor<T>,
    grid: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<bool>)> {
    const OP: &str = "bilinear_sample";
    let (c, h, w) = match *img.shape() {
        [c, h, w] => (c, h, w),
        ref s => {
            return Err(Error::shape(
                OP,
                format!("image must be [C,H,W], got {s:?}"),
            ))
        }
    };
    let (ho, wo) = match *grid.shape() {
        [2, ho, wo] => (ho, wo),
        ref s => return Err(Error::shape(OP, format!("grid must be [2,H,W], got {s:?}"))),
    };
    let n = ho * wo;
    let taps: Vec<Tap> = {
        let g = grid.data();
        (0..n)
            .map(|i| tap(g[i].to_f64c(), g[n + i].to_f64c(), h, w))
            .collect()
    };
    let in_bounds = taps.iter().map(|t| !t.clamped_x && !t.clamped_y).collect();
    let mut out = vec![T::zero(); c * n];
    {
        let src = img.data();
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for (i, t) in taps.iter().enumerate() {
                out[ch * n + i] = T::from_f64c(interp(plane, w, t));
            }
        }
    }
    let img_c = img.clone();
    let result = Tensor::from_op(
        OP,
        vec![c, ho, wo],
        out,
        vec![img.clone(), grid.clone()],
        Box::new(move |g, _, needs| {
            let gimg = needs[0].then(|| {
                let mut gi = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    let plane = &mut gi[ch * h * w..(ch + 1) * h * w];
                    for (i, t) in taps.iter().enumerate() {
                        let go = g[ch * n + i].to_f64c();
                        let (ax, ay) = (1.0 - t.wx, 1.0 - t.wy);
                        let add = |p: &mut [T], y: usize, x: usize, wgt: f64| {
                            p[y * w + x] = p[y * w + x] + T::from_f64c(go * wgt);
                        };
                        add(plane, t.y0, t.x0, ax * ay);
                        add(plane, t.y0, t.x1, t.wx * ay);
                        add(plane, t.y1, t.x0, ax * t.wy);
                        add(plane, t.y1, t.x1, t.wx * t.wy);
                    }
                }
                gi
            });
            let ggrid = needs[1].then(|| {
                let src = img_c.data();
                let mut gg = vec![T::zero(); 2 * n];
                for (i, t) in taps.iter().enumerate() {
                    let (mut dx, mut dy) = (0.0, 0.0);
                    for ch in 0..c {
                        let p = &src[ch * h * w..(ch + 1) * h * w];
                        let at = |y: usize, x: usize| p[y * w + x].to_f64c();
                        let go = g[ch * n + i].to_f64c();
                        let (v00, v01, v10, v11) = (
                            at(t.y0, t.x0),
                            at(t.y0, t.x1),
                            at(t.y1, t.x0),
                            at(t.y1, t.x1),
                        );
                        dx += go * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                        dy += go * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                    }
                    if !t.clamped_x {
                        gg[i] = T::from_f64c(dx);
                    }
                    if !t.clamped_y {
                        gg[n + i] = T::from_f64c(dy);
                    }
                }
                gg
            });
            vec![gimg, ggrid]
        }),
    );
    Ok((result, in_bounds))
}

fn interp<T: Scalar>(plane: &[T], w: usize, t: &Tap) -> f64 {
    let at = |y: usize, x: usize| plane[y * w + x].to_f64c();
    let top = (1.0 - t.wx) * at(t.y0, t.x0) + t.wx * at(t.y0, t.x1);
    let bot = (1.0 - t.wx) * at(t.y1, t.x0) + t.wx * at(t.y1, t.x1);
    (1.0 - t.wy) * top + t.wy * bot
}

/// The view being reconstructed by a stereo warp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StereoSide {
    Left,
    Right,
}

impl StereoSide {
    pub fn other(self) -> StereoSide {
        match self {
            StereoSide::Left => StereoSide::Right,
            StereoSide::Right => StereoSide::Left,
        }
    }
}

/// Where the right camera sits relative to the left one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpConvention {
    /// Right camera displaced along +x: the left view is reconstructed by
    /// sampling the right image at `x - d`, the right view at `x + d`.
    #[default]
    RightIsPositiveX,
    /// Mirrored rig: signs flipped.
    RightIsNegativeX,
}

impl WarpConvention {
    fn sign(self, side: StereoSide) -> f64 {
        let s = match side {
            StereoSide::Left => -1.0,
            StereoSide::Right => 1.0,
        };
        match self {
            WarpConvention::RightIsPositiveX => s,
            WarpConvention::RightIsNegativeX => -s,
        }
    }
}

/// Reconstructs the `side` view from the other view `other` (`[C, H, W]`)
/// using the `side` view's disparity `disp` (`[H, W]` or `[1, H, W]`).
/// Returns the reconstruction and the in-bounds flags of the sample grid.
pub fn warp_stereo<T: Scalar>(
    other: &Tensor<T>,
    disp: &Tensor<T>,
    side: StereoSide,
    convention: WarpConvention,
) -> Result<(Tensor<T>, Vec<bool>)> {
    let (h, w) = match *disp.shape() {
        [h, w] | [1, h, w] => (h, w),
        ref s => {
            return Err(Error::shape(
                "warp_stereo",
                format!("disparity must be [H,W] or [1,H,W], got {s:?}"),
            ))
        }
    };
    if other.ndim() != 3 || other.shape()[1] != h || other.shape()[2] != w {
        return Err(Error::shape(
            "warp_stereo",
            format!("image {:?} does not match disparity {h}x{w}", other.shape()),
        ));
    }
    let xs = (0..h * w).map(|i| T::from_f64c((i % w) as f64)).collect();
    let ys = (0..h * w).map(|i| T::from_f64c((i / w) as f64)).collect();
    let base_x = Tensor::from_vec(&[1, h, w], xs)?;
    let base_y = Tensor::from_vec(&[1, h, w], ys)?;
    let d = disp.reshape(&[1, h, w])?;
    let gx = base_x.add(&d.mul_scalar(convention.sign(side)))?;
    let grid = Tensor::concat(&[&gx, &base_y], 0)?;
    bilinear_sample_masked(other, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_from(h: usize, w: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Tensor<f64> {
        let mut g = vec![0.0; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = f(y, x);
                g[y * w + x] = sx;
                g[h * w + y * w + x] = sy;
            }
        }
        Tensor::from_vec(&[2, h, w], g).unwrap()
    }

    #[test]
    fn hand_bilinear_value() {
        let img = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let grid = Tensor::from_vec(&[2, 1, 1], vec![0.5, 0.5]).unwrap();
        assert_eq!(bilinear_sample(&img, &grid).unwrap().to_vec(), vec![1.5]);
    }

    #[test]
    fn out_of_bounds_clamps_and_flags() {
        let img = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let grid = Tensor::from_vec(&[2, 1, 3], vec![-4.0, 9.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let (out, ok) = bilinear_sample_masked(&img, &grid).unwrap();
        assert_eq!(out.to_vec(), vec![0.0, 1.0, 3.0]);
        assert_eq!(ok, vec![false, false, true]);
    }

    #[test]
    fn zero_disparity_is_identity() {
        let img =
            Tensor::<f32>::from_vec(&[2, 3, 4], (0..24).map(|v| v as f32 * 0.1).collect()).unwrap();
        let d = Tensor::zeros(&[3, 4]);
        for side in [StereoSide::Left, StereoSide::Right] {
            let (out, ok) = warp_stereo(&img, &d, side, WarpConvention::default()).unwrap();
            assert_eq!(out.to_vec(), img.to_vec());
            assert!(ok.iter().all(|&b| b));
        }
    }

    #[test]
    fn ramp_shifts_by_disparity() {
        let (h, w) = (3, 20);
        let ramp: Vec<f64> = (0..h * w).map(|i| (i % w) as f64).collect();
        let img = Tensor::from_vec(&[1, h, w], ramp).unwrap();
        let d = Tensor::full(&[h, w], 5.0);
        let (left, _) = warp_stereo(&img, &d, StereoSide::Left, WarpConvention::default()).unwrap();
        let (right, _) =
            warp_stereo(&img, &d, StereoSide::Right, WarpConvention::default()).unwrap();
        let (l, r) = (left.to_vec(), right.to_vec());
        for y in 0..h {
            for x in 5..w - 5 {
                assert_eq!(l[y * w + x], x as f64 - 5.0);
                assert_eq!(r[y * w + x], x as f64 + 5.0);
            }
        }
        let (flipped, _) =
            warp_stereo(&img, &d, StereoSide::Left, WarpConvention::RightIsNegativeX).unwrap();
        assert_eq!(flipped.to_vec()[7], 12.0);
    }

    #[test]
    fn gradient_reaches_disparity() {
        let img = Tensor::from_vec(&[1, 1, 6], vec![0.0, 1.0, 4.0, 9.0, 16.0, 25.0]).unwrap();
        let d = Tensor::param(&[1, 6], vec![0.5; 6]).unwrap();
        let (out, _) = warp_stereo(&img, &d, StereoSide::Right, WarpConvention::default()).unwrap();
        out.sum().backward().unwrap();
        let g = d.grad().unwrap();
        // Right view samples at x + d; slope of the piecewise-linear image.
        assert_eq!(&g[..5], &[1.0, 3.0, 5.0, 7.0, 9.0]);
    }

    proptest! {
        #[test]
        fn integer_grids_are_exact(
            h in 1usize..6, w in 1usize..6, seed in any::<u64>(), shift in 0usize..5,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..2 * h * w).map(|_| rng.gen()).collect();
            let img = Tensor::from_vec(&[2, h, w], data.clone()).unwrap();
            let grid = grid_from(h, w, |y, x| (((x + shift) % w) as f64, y as f64)).cast::<f32>();
            let out = bilinear_sample(&img, &grid).unwrap().to_vec();
            for c in 0..2 {
                for y in 0..h {
                    for x in 0..w {
                        prop_assert_eq!(out[(c * h + y) * w + x], data[(c * h + y) * w + (x + shift) % w]);
                    }
                }
            }
        }

        #[test]
        fn output_within_source_range(
            seed in any::<u64>(), coords in prop::collection::vec((-3.0f64..8.0, -3.0f64..8.0), 12),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
            let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let img = Tensor::from_vec(&[1, 4, 5], data).unwrap();
            let grid = grid_from(3, 4, |y, x| coords[y * 4 + x]);
            for v in bilinear_sample(&img, &grid).unwrap().to_vec() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
