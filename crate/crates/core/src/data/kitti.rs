//! KITTI odometry layout:
//!
//! ```text
//! root/sequences/NN/image_2/000000.png   left color camera
//! root/sequences/NN/image_3/000000.png   right color camera
//! root/sequences/NN/calib.txt            "P2: ..." and "P3: ..." (12 floats each)
//! root/sequences/NN/depth/000000.png     optional 16-bit depth, value / 256 = meters
//! root/poses/NN.txt                      one row-major 3x4 camera-to-world pose per line
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::StereoSequence;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DepthMap, Pose};
use crate::image::{load_depth_png, save_depth_png, Image};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_floats(path: &Path, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("`{tok}` is not a finite number")))
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Camera intrinsics from `P2`/`P3`. The baseline is the difference of the
/// two horizontal projection offsets divided by fx, which reduces to
/// `-P3[0,3] / fx` when `P2[0,3] = 0`.
pub fn parse_calib(path: &Path, text: &str) -> Result<CameraModel> {
    let mut p2 = None;
    let mut p3 = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, rest)) = raw.split_once(':') else {
            if raw.trim().is_empty() {
                continue;
            }
            return Err(parse_err(path, line, "expected `KEY: values`"));
        };
        let slot = match key.trim() {
            "P2" => &mut p2,
            "P3" => &mut p3,
            _ => continue,
        };
        let v = parse_floats(path, line, rest)?;
        if v.len() != 12 {
            return Err(parse_err(
                path,
                line,
                format!("{} expects 12 values, found {}", key.trim(), v.len()),
            ));
        }
        *slot = Some(v);
    }
    let missing = |k: &str| {
        parse_err(
            path,
            text.lines().count().max(1),
            format!("missing {k} line"),
        )
    };
    let p2 = p2.ok_or_else(|| missing("P2"))?;
    let p3 = p3.ok_or_else(|| missing("P3"))?;
    let fx = p2[0];
    let cam = CameraModel {
        fx,
        fy: p2[5],
        cx: p2[2],
        cy: p2[6],
        baseline: (p2[3] - p3[3]) / fx,
    };
    cam.validate()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    Ok(cam)
}

/// One pose per non-empty line, 12 floats row-major.
pub fn parse_poses(path: &Path, text: &str) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let v = parse_floats(path, line, raw)?;
        let arr: [f64; 12] = v
            .as_slice()
            .try_into()
            .map_err(|_| parse_err(path, line, format!("expected 12 values, found {}", v.len())))?;
        out.push(Pose::from_row_major(&arr).map_err(|e| parse_err(path, line, e.to_string()))?);
    }
    Ok(out)
}

fn seq_dir(root: &Path, seq: u32) -> PathBuf {
    root.join("sequences").join(format!("{seq:02}"))
}

fn frame_name(i: usize) -> String {
    format!("{i:06}.png")
}

/// A sequence on disk. Frames are read on access.
#[derive(Clone, Debug)]
pub struct KittiSequence {
    pub dir: PathBuf,
    pub cam: CameraModel,
    pub poses: Vec<Pose>,
    /// Center crop applied to every frame; intrinsics are already adjusted.
    pub crop: Option<(usize, usize)>,
}

impl KittiSequence {
    pub fn open(root: impl AsRef<Path>, seq: u32) -> Result<Self> {
        let root = root.as_ref();
        let dir = seq_dir(root, seq);
        for sub in ["image_2", "image_3"] {
            let p = dir.join(sub);
            if !p.is_dir() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing image directory"),
                ));
            }
        }
        let calib = dir.join("calib.txt");
        let cam = parse_calib(&calib, &read(&calib)?)?;
        let poses_path = root.join("poses").join(format!("{seq:02}.txt"));
        let poses = parse_poses(&poses_path, &read(&poses_path)?)?;
        Ok(KittiSequence {
            dir,
            cam,
            poses,
            crop: None,
        })
    }

    /// Center-crops all frames to `height x width`. The crop size is checked
    /// against the first frame.
    pub fn with_crop(mut self, height: usize, width: usize) -> Result<Self> {
        let first = Image::load_png(self.dir.join("image_2").join(frame_name(0)))?;
        if height > first.height || width > first.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} exceeds frame size {}x{}",
                first.height, first.width
            )));
        }
        self.cam.cx -= ((first.width - width) / 2) as f64;
        self.cam.cy -= ((first.height - height) / 2) as f64;
        self.crop = Some((height, width));
        Ok(self)
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.poses.len() {
            return Err(Error::InvalidArgument(format!(
                "frame {i} out of range, sequence has {} poses",
                self.poses.len()
            )));
        }
        Ok(())
    }

    fn image(&self, sub: &str, i: usize) -> Result<Image> {
        self.check(i)?;
        let img = Image::load_png(self.dir.join(sub).join(frame_name(i)))?;
        match self.crop {
            Some((h, w)) => img.center_crop(h, w),
            None => Ok(img),
        }
    }
}

impl StereoSequence for KittiSequence {
    fn len(&self) -> usize {
        self.poses.len()
    }

    fn camera(&self) -> CameraModel {
        self.cam
    }

    fn pose(&self, i: usize) -> Result<Pose> {
        self.check(i)?;
        Ok(self.poses[i])
    }

    fn left(&self, i: usize) -> Result<Image> {
        self.image("image_2", i)
    }

    fn right(&self, i: usize) -> Result<Image> {
        self.image("image_3", i)
    }

    fn gt_depth(&self, i: usize) -> Option<DepthMap> {
        let path = self.dir.join("depth").join(frame_name(i));
        let (h, w, data) = load_depth_png(path).ok()?;
        let full = DepthMap::new(h, w, data).ok()?;
        match self.crop {
            None => Some(full),
            Some((ch, cw)) => {
                let (y0, x0) = ((h - ch) / 2, (w - cw) / 2);
                let data = (0..ch)
                    .flat_map(|y| (0..cw).map(move |x| (y, x)))
                    .map(|(y, x)| full.data[(y0 + y) * w + x0 + x])
                    .collect();
                DepthMap::new(ch, cw, data).ok()
            }
        }
    }
}

fn fmt_row(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        // Shortest round-trip representation.
        write!(s, "{x:e}").unwrap();
    }
    s
}

/// Writes any stereo sequence in KITTI layout under `root`, including
/// ground-truth depth when available.
pub fn write_kitti_sequence(
    root: impl AsRef<Path>,
    seq_id: u32,
    seq: &(impl StereoSequence + ?Sized),
) -> Result<()> {
    let root = root.as_ref();
    let dir = seq_dir(root, seq_id);
    let cam = seq.camera();
    let p2 = [
        cam.fx, 0.0, cam.cx, 0.0, 0.0, cam.fy, cam.cy, 0.0, 0.0, 0.0, 1.0, 0.0,
    ];
    let mut p3 = p2;
    p3[3] = -cam.fx * cam.baseline;
    let calib = format!("P2: {}\nP3: {}\n", fmt_row(&p2), fmt_row(&p3));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let calib_path = dir.join("calib.txt");
    std::fs::write(&calib_path, calib).map_err(|e| Error::io(&calib_path, e))?;
    let mut poses = String::new();
    for i in 0..seq.len() {
        poses.push_str(&fmt_row(&seq.pose(i)?.to_row_major()));
        poses.push('\n');
        seq.left(i)?
            .save_png(dir.join("image_2").join(frame_name(i)))?;
        seq.right(i)?
            .save_png(dir.join("image_3").join(frame_name(i)))?;
        if let Some(d) = seq.gt_depth(i) {
            save_depth_png(
                dir.join("depth").join(frame_name(i)),
                d.height,
                d.width,
                &d.data,
            )?;
        }
    }
    let pose_dir = root.join("poses");
    std::fs::create_dir_all(&pose_dir).map_err(|e| Error::io(&pose_dir, e))?;
    let pose_path = pose_dir.join(format!("{seq_id:02}.txt"));
    std::fs::write(&pose_path, poses).map_err(|e| Error::io(&pose_path, e))
}
