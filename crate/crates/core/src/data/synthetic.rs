//! Layered fronto-parallel plane scenes rendered with exact ground truth.
//!
//! Every plane carries a value-noise texture attached to world coordinates,
//! so all views of a scene are mutually consistent. With integer plane
//! disparities and camera steps that are whole multiples of the baseline
//! along x, every view is an exact integer shift of every other view, plane
//! by plane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::texture::ValueNoise;
use super::StereoSequence;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap, Pose};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Focal length in pixels (fx = fy).
    pub focal: f64,
    pub baseline: f64,
    pub min_planes: usize,
    pub max_planes: usize,
    /// Integer plane disparities (pixels, left camera at frame 0) are drawn
    /// from this range.
    pub min_disparity: u32,
    pub max_disparity: u32,
    pub frames: usize,
    /// Camera translation per frame in meters; defaults to one baseline along x.
    pub track_step: Option<[f64; 3]>,
    pub texture_cell: f64,
    pub texture_octaves: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            focal: 64.0,
            baseline: 0.54,
            min_planes: 1,
            max_planes: 4,
            min_disparity: 2,
            max_disparity: 12,
            frames: 5,
            track_step: None,
            texture_cell: 6.0,
            texture_octaves: 3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene: {m}")));
        if self.min_planes == 0 || self.max_planes < self.min_planes {
            return bad("need 1 <= min_planes <= max_planes");
        }
        if self.min_disparity == 0 || self.max_disparity < self.min_disparity {
            return bad("need 1 <= min_disparity <= max_disparity");
        }
        let distinct = (self.max_disparity - self.min_disparity + 1) as usize;
        if distinct < self.max_planes {
            return bad("disparity range too narrow for distinct plane disparities");
        }
        if self.height < 4 || self.width < 4 || self.frames == 0 {
            return bad("image must be at least 4x4 with at least one frame");
        }
        if !(self.focal > 0.0 && self.baseline > 0.0 && self.texture_cell > 0.0) {
            return bad("focal, baseline and texture_cell must be positive");
        }
        Ok(())
    }

    pub fn step(&self) -> [f64; 3] {
        self.track_step.unwrap_or([self.baseline, 0.0, 0.0])
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            baseline: self.baseline,
        }
    }
}

/// A textured plane at depth `depth`, covering a world-space rectangle
/// (`None` for the unbounded background).
#[derive(Clone, Debug)]
pub struct Plane {
    pub depth: f64,
    pub rect: Option<[f64; 4]>,
    pub textures: [ValueNoise; 3],
}

/// One time step: stereo images and their ground truth.
#[derive(Clone, Debug)]
pub struct SceneFrame {
    pub left: Image,
    pub right: Image,
    /// Left camera center.
    pub position: [f64; 3],
    pub disp_left: Vec<f64>,
    pub disp_right: Vec<f64>,
    pub depth_left: DepthMap,
    /// Left pixels whose match in the right view is hidden or out of frame.
    pub occluded_left: Vec<bool>,
    pub occluded_right: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub seed: u64,
    pub cfg: SceneConfig,
    pub cam: CameraModel,
    /// Sorted far to near.
    pub planes: Vec<Plane>,
    pub frames: Vec<SceneFrame>,
}

struct Render {
    image: Image,
    plane: Vec<usize>,
    depth: Vec<f64>,
}

impl SyntheticScene {
    pub fn generate(seed: u64, cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = cfg.camera();
        let count = rng.gen_range(cfg.min_planes..=cfg.max_planes);
        let mut pool: Vec<u32> = (cfg.min_disparity..=cfg.max_disparity).collect();
        let mut disps = Vec::with_capacity(count);
        for _ in 0..count {
            disps.push(pool.swap_remove(rng.gen_range(0..pool.len())));
        }
        disps.sort_unstable();
        let (h, w) = (cfg.height as f64, cfg.width as f64);
        let planes = disps
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let depth = cam.focal_baseline() / d as f64;
                let textures = [0u64, 1, 2].map(|c| {
                    ValueNoise::new(rng.gen::<u64>() ^ c, cfg.texture_cell, cfg.texture_octaves)
                });
                // Foreground rectangles are placed in frame-0 left pixel
                // coordinates with half-integer edges, then lifted to world.
                let rect = (k > 0).then(|| {
                    let rw = (w * rng.gen_range(0.25..0.55)).round();
                    let rh = (h * rng.gen_range(0.3..0.7)).round();
                    let x0 = rng.gen_range(0.0..(w - rw)).floor() + 0.5;
                    let y0 = rng.gen_range(0.0..(h - rh)).floor() + 0.5;
                    [
                        (x0 - cam.cx) * depth / cam.fx,
                        (x0 + rw - cam.cx) * depth / cam.fx,
                        (y0 - cam.cy) * depth / cam.fy,
                        (y0 + rh - cam.cy) * depth / cam.fy,
                    ]
                });
                Plane {
                    depth,
                    rect,
                    textures,
                }
            })
            .collect();
        let mut scene = SyntheticScene {
            seed,
            cfg: cfg.clone(),
            cam,
            planes,
            frames: Vec::with_capacity(cfg.frames),
        };
        let step = cfg.step();
        for f in 0..cfg.frames {
            let pos = step.map(|s| s * f as f64);
            let frame = scene.render_frame(pos)?;
            scene.frames.push(frame);
        }
        Ok(scene)
    }

    /// `count` scenes with seeds `base_seed, base_seed + 1, ...`.
    pub fn dataset(base_seed: u64, count: usize, cfg: &SceneConfig) -> Result<Vec<SyntheticScene>> {
        (0..count)
            .map(|i| SyntheticScene::generate(base_seed + i as u64, cfg))
            .collect()
    }

    fn render(&self, c: [f64; 3]) -> Result<Render> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let cam = &self.cam;
        let n = h * w;
        let mut image = Image::zeros(3, h, w);
        let mut plane = vec![0; n];
        let mut depth = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                // Nearest plane first.
                let hit = self.planes.iter().enumerate().rev().find_map(|(k, pl)| {
                    let z = pl.depth - c[2];
                    if z <= 0.0 {
                        return None;
                    }
                    let wx = c[0] + (x as f64 - cam.cx) * z / cam.fx;
                    let wy = c[1] + (y as f64 - cam.cy) * z / cam.fy;
                    let inside = pl
                        .rect
                        .map_or(true, |r| wx >= r[0] && wx < r[1] && wy >= r[2] && wy < r[3]);
                    inside.then_some((k, z, wx, wy))
                });
                let Some((k, z, wx, wy)) = hit else {
                    return Err(Error::InvalidArgument(format!(
                        "camera at {c:?} passed the background plane"
                    )));
                };
                let pl = &self.planes[k];
                let (u, v) = (wx * cam.fx / pl.depth, wy * cam.fy / pl.depth);
                for ch in 0..3 {
                    let t = pl.textures[ch].sample(u, v);
                    image.set(ch, y, x, (0.05 + 0.9 * t) as f32);
                }
                plane[p] = k;
                depth[p] = z;
            }
        }
        Ok(Render {
            image,
            plane,
            depth,
        })
    }

    fn render_frame(&self, pos: [f64; 3]) -> Result<SceneFrame> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let fb = self.cam.focal_baseline();
        let left = self.render(pos)?;
        let right = self.render([pos[0] + self.cam.baseline, pos[1], pos[2]])?;
        let disp_left: Vec<f64> = left.depth.iter().map(|z| fb / z).collect();
        let disp_right: Vec<f64> = right.depth.iter().map(|z| fb / z).collect();
        let occluded = |own: &Render, disp: &[f64], other: &Render, sign: f64| -> Vec<bool> {
            (0..h * w)
                .map(|p| {
                    let (y, x) = (p / w, p % w);
                    let xo = (x as f64 + sign * disp[p]).round();
                    if xo < 0.0 || xo >= w as f64 {
                        return true;
                    }
                    other.plane[y * w + xo as usize] != own.plane[p]
                })
                .collect()
        };
        let occluded_left = occluded(&left, &disp_left, &right, -1.0);
        let occluded_right = occluded(&right, &disp_right, &left, 1.0);
        Ok(SceneFrame {
            depth_left: DepthMap::new(h, w, left.depth)?,
            left: left.image,
            right: right.image,
            position: pos,
            disp_left,
            disp_right,
            occluded_left,
            occluded_right,
        })
    }

    pub fn frame(&self, i: usize) -> Result<&SceneFrame> {
        self.frames.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "frame {i} out of range for a {}-frame scene",
                self.frames.len()
            ))
        })
    }

    /// The middle frame, used as the stereo pair of the scene.
    pub fn center(&self) -> &SceneFrame {
        &self.frames[self.frames.len() / 2]
    }
}

impl StereoSequence for SyntheticScene {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn camera(&self) -> CameraModel {
        self.cam
    }

    fn pose(&self, i: usize) -> Result<Pose> {
        Ok(Pose::translation(self.frame(i)?.position))
    }

    fn left(&self, i: usize) -> Result<Image> {
        Ok(self.frame(i)?.left.clone())
    }

    fn right(&self, i: usize) -> Result<Image> {
        Ok(self.frame(i)?.right.clone())
    }

    fn gt_depth(&self, i: usize) -> Option<DepthMap> {
        self.frames.get(i).map(|f| f.depth_left.clone())
    }
}
