use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics plus stereo baseline (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> Result<Self> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            baseline,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.baseline]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.baseline <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "camera needs finite fx, fy, baseline > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Point at depth `z` seen through pixel `(x, y)`.
    pub fn back_project(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        [(x - self.cx) / self.fx * z, (y - self.cy) / self.fy * z, z]
    }

    /// Homogeneous image point `K X` (not divided by depth).
    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        [
            self.fx * p[0] + self.cx * p[2],
            self.fy * p[1] + self.cy * p[2],
            p[2],
        ]
    }

    /// `fx * B`: disparity of a point at 1 m.
    pub fn focal_baseline(&self) -> f64 {
        self.fx * self.baseline
    }
}

/// Rigid transform `X -> R X + T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

const ORTHO_TOL: f64 = 1e-6;

impl Pose {
    pub fn identity() -> Self {
        Pose {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Pose {
            t,
            ..Pose::identity()
        }
    }

    /// Checks that `R` is a proper rotation.
    pub fn new(r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let p = Pose { r, t };
        let rtr = mat_mul(&transpose(&r), &r);
        let mut err: f64 = 0.0;
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                err = err.max((v - id).abs());
            }
        }
        let det = det3(&r);
        if !(err <= ORTHO_TOL && (det - 1.0).abs() <= ORTHO_TOL) || t.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "pose rotation is not orthonormal (|RtR - I| = {err:.3e}, det = {det:.6})"
            )));
        }
        Ok(p)
    }

    /// Parses the 12 values of a row-major `3x4` matrix `[R | T]`.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let r = [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]];
        Pose::new(r, [v[3], v[7], v[11]])
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let (r, t) = (&self.r, &self.t);
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2],
        ]
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.r;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.t[2],
        ]
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = mat_mul(&self.r, &other.r);
        let rt = mat_vec(&self.r, &other.t);
        Pose {
            r,
            t: [rt[0] + self.t[0], rt[1] + self.t[1], rt[2] + self.t[2]],
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = transpose(&self.r);
        let t = mat_vec(&rt, &self.t);
        Pose {
            r: rt,
            t: [-t[0], -t[1], -t[2]],
        }
    }

    /// For camera-to-world poses: the transform taking points in this
    /// camera's frame into `target`'s frame, `inverse(target) * self`.
    pub fn relative_to(&self, target: &Pose) -> Pose {
        target.inverse().compose(self)
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        self.to_row_major()
            .iter()
            .zip(other.to_row_major())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut o = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            o[j][i] = *v;
        }
    }
    o
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    o
}

fn mat_vec(a: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}
