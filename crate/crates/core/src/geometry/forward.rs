use super::camera::{CameraModel, Pose};
use crate::error::{Error, Result};
use crate::image::Image;

/// Added before flooring projected coordinates so that values which are
/// integral up to f64 round-off land on the intended pixel.
pub const FLOOR_GUARD: f64 = 1e-6;

/// Per-pixel depth in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "depth map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(DepthMap {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, z: f64) -> Self {
        DepthMap {
            height,
            width,
            data: vec![z; height * width],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthConversion {
    pub depth: DepthMap,
    /// Pixels whose disparity was raised to the floor.
    pub clamped: usize,
}

/// `Z = fx * B / d`, with disparities below `d_min` raised to `d_min`.
pub fn disparity_to_depth(
    disp: &[f64],
    height: usize,
    width: usize,
    cam: &CameraModel,
    d_min: f64,
) -> Result<DepthConversion> {
    if !(d_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "disparity floor must be positive, got {d_min}"
        )));
    }
    let fb = cam.focal_baseline();
    let mut clamped = 0;
    let data = disp
        .iter()
        .map(|&d| {
            let d = if d < d_min || d.is_nan() {
                clamped += 1;
                d_min
            } else {
                d
            };
            fb / d
        })
        .collect();
    Ok(DepthConversion {
        depth: DepthMap::new(height, width, data)?,
        clamped,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// Source pixels that landed on a target pixel (before z-buffering).
    pub landed: usize,
    pub outside: usize,
    pub behind: usize,
    /// Landings on an already written target pixel.
    pub collisions: usize,
}

/// Forward-mapped RGB image with its validity mask. `rgb` is zero wherever
/// `mask` is false.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedView {
    pub rgb: Image,
    pub mask: Vec<bool>,
    pub stats: ForwardStats,
}

impl WarpedView {
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    pub fn mask_image(&self) -> Image {
        let data = self
            .mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        Image::from_vec(1, self.rgb.height, self.rgb.width, data).expect("mask extents")
    }

    /// A fully valid view (no holes).
    pub fn full(rgb: Image) -> Self {
        let n = rgb.plane_len();
        WarpedView {
            rgb,
            mask: vec![true; n],
            stats: ForwardStats::default(),
        }
    }
}

/// Projects every source pixel into the target camera:
/// `[x', y', z'] = K (R Z K^-1 [x, y, 1] + T)`, target pixel
/// `(floor(x'/z'), floor(y'/z'))`. Collisions keep the smallest `z'`.
pub fn forward_map(
    src: &Image,
    depth: &DepthMap,
    cam: &CameraModel,
    pose: &Pose,
) -> Result<WarpedView> {
    let (h, w) = (src.height, src.width);
    if depth.height != h || depth.width != w {
        return Err(Error::shape(
            "forward_map",
            format!(
                "depth {}x{} does not match image {h}x{w}",
                depth.height, depth.width
            ),
        ));
    }
    if let Some(z) = depth.data.iter().find(|z| !(**z > 0.0) || !z.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "forward_map needs finite positive depth, found {z}"
        )));
    }
    let c = src.channels;
    let mut zbuf = vec![f64::INFINITY; h * w];
    let mut from = vec![usize::MAX; h * w];
    let mut stats = ForwardStats::default();
    for y in 0..h {
        for x in 0..w {
            let s = y * w + x;
            let p = cam.project(pose.apply(cam.back_project(x as f64, y as f64, depth.data[s])));
            if p[2] <= 0.0 {
                stats.behind += 1;
                continue;
            }
            let u = (p[0] / p[2] + FLOOR_GUARD).floor();
            let v = (p[1] / p[2] + FLOOR_GUARD).floor();
            if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
                stats.outside += 1;
                continue;
            }
            stats.landed += 1;
            let t = v as usize * w + u as usize;
            if from[t] != usize::MAX {
                stats.collisions += 1;
            }
            if p[2] < zbuf[t] {
                zbuf[t] = p[2];
                from[t] = s;
            }
        }
    }
    let mut rgb = Image::zeros(c, h, w);
    let n = h * w;
    for (t, &s) in from.iter().enumerate() {
        if s != usize::MAX {
            for ch in 0..c {
                rgb.data[ch * n + t] = src.data[ch * n + s];
            }
        }
    }
    Ok(WarpedView {
        rgb,
        mask: from.iter().map(|&s| s != usize::MAX).collect(),
        stats,
    })
}

/// One reference frame ready for forward mapping; `pose` maps the reference
/// camera frame into the target frame.
#[derive(Clone, Debug)]
pub struct ReferenceView {
    pub image: Image,
    pub depth: DepthMap,
    pub pose: Pose,
}

/// Forward-maps every reference into the target camera, preserving order.
pub fn warp_reference_set(refs: &[ReferenceView], cam: &CameraModel) -> Result<Vec<WarpedView>> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("no reference views".into()));
    }
    refs.iter()
        .map(|r| forward_map(&r.image, &r.depth, cam, &r.pose))
        .collect()
}
