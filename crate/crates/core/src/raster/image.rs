//! Floating-point RGB images, PSNR and PNG/PPM output.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::Vector3;

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Row-major RGB image with `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    data: Vec<Vector3<f64>>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Vector3<f64>) -> Self {
        Image {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<Vector3<f64>>) -> Self {
        assert_eq!(data.len(), width * height);
        Image {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: Vector3<f64>) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.data
    }

    pub fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        Ok(())
    }

    fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let mut buf = ImageBuffer::new(self.width as u32, self.height as u32);
        for (i, p) in buf.pixels_mut().enumerate() {
            let c = self.data[i];
            *p = Rgb([to_u8(c.x), to_u8(c.y), to_u8(c.z)]);
        }
        buf
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    /// Binary PPM (P6).
    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend(self.to_rgb8().into_raw());
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Saves as PPM when the extension is `.ppm`, PNG otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => self.save_ppm(path),
            _ => self.save_png(path),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Scalar field in `[0, 1]` written as 8-bit grayscale.
pub fn save_gray_png(width: usize, height: usize, values: &[f64], path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        Luma([to_u8(values[y as usize * width + x as usize])])
    });
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Index map written as 16-bit grayscale: 0 for none, `index + 1` otherwise
/// (saturating at 65535).
pub fn save_index_png(width: usize, height: usize, values: &[Option<usize>], path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let v = values[y as usize * width + x as usize].map_or(0, |i| (i + 1).min(u16::MAX as usize));
        Luma([v as u16])
    });
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// `10 log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(image: &Image, gt: &Image) -> Result<f64> {
    image.check_same_dims(gt)?;
    let n = (image.data.len() * 3) as f64;
    let sse: f64 = image
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let mse = sse / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}
