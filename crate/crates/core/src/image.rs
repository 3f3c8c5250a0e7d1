//! Planar float images and PNG I/O.
//!
//! Pixel values live in `[0, 1]` internally; PNG files are 8-bit (color) or
//! 16-bit grayscale (depth, value / 256 meters).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channel-major `C x H x W` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64c(v as f64)).collect();
        Tensor::from_vec(&[self.channels, self.height, self.width], data)
            .expect("image extents match data")
    }

    /// Accepts `[C, H, W]` or `[1, C, H, W]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        let (c, h, w) = match *s {
            [c, h, w] => (c, h, w),
            [1, c, h, w] => (c, h, w),
            _ => {
                return Err(Error::shape(
                    "image",
                    format!("expected [C,H,W] or [1,C,H,W], got {s:?}"),
                ))
            }
        };
        let data = t.data().iter().map(|v| v.to_f64c() as f32).collect();
        Image::from_vec(c, h, w, data)
    }

    /// Center crop to `height x width`.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {}x{} image to {height}x{width}",
                self.height, self.width
            )));
        }
        let y0 = (self.height - height) / 2;
        let x0 = (self.width - width) / 2;
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        Ok(out)
    }

    /// Reads an 8-bit PNG as RGB in `[0, 1]`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::zeros(3, h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, p[c] as f32 / 255.0);
            }
        }
        Ok(out)
    }

    /// Writes a 1- or 3-channel image as 8-bit PNG (values clamped to `[0, 1]`).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => image::GrayImage::from_fn(w, h, |x, y| {
                image::Luma([to_u8(self.get(0, y as usize, x as usize))])
            })
            .save(path),
            3 => image::RgbImage::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([
                    to_u8(self.get(0, y, x)),
                    to_u8(self.get(1, y, x)),
                    to_u8(self.get(2, y, x)),
                ])
            })
            .save(path),
            c => {
                return Err(Error::InvalidArgument(format!(
                    "cannot write a {c}-channel image as PNG"
                )))
            }
        };
        res.map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes a depth map (meters) as 16-bit PNG with value = round(depth * 256).
pub fn save_depth_png(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    depth: &[f64],
) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(
        width as u32,
        height as u32,
        |x, y| {
            let z = depth[y as usize * width + x as usize];
            image::Luma([(z * 256.0).round().clamp(0.0, 65535.0) as u16])
        },
    );
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Inverse of [`save_depth_png`]; returns `(height, width, depth)`.
pub fn load_depth_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_luma16();
    let depth = img.pixels().map(|p| p[0] as f64 / 256.0).collect();
    Ok((img.height() as usize, img.width() as usize, depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 4 * 5)
            .map(|i| ((i * 37) % 256) as f32 / 255.0)
            .collect();
        let img = Image::from_vec(3, 4, 5, data).unwrap();
        let p = dir.path().join("a/b.png");
        img.save_png(&p).unwrap();
        let back = Image::load_png(&p).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn depth_png_quantizes_to_1_256() {
        let dir = tempfile::tempdir().unwrap();
        let depth = vec![1.0, 3.8818, 0.0, 100.25];
        let p = dir.path().join("d.png");
        save_depth_png(&p, 2, 2, &depth).unwrap();
        let (h, w, back) = load_depth_png(&p).unwrap();
        assert_eq!((h, w), (2, 2));
        for (a, b) in depth.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 256.0);
        }
    }

    #[test]
    fn center_crop_takes_middle() {
        let img = Image::from_vec(1, 4, 4, (0..16).map(|v| v as f32).collect()).unwrap();
        let c = img.center_crop(2, 2).unwrap();
        assert_eq!(c.data, vec![5.0, 6.0, 9.0, 10.0]);
        assert!(img.center_crop(5, 1).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Image::load_png("/definitely/not/here.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
