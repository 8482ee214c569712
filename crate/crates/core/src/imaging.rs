//! Grayscale image plane, decoding and the fixed-size preprocessing step.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Row-major single-channel image. Network inputs hold values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image has zero size".into()));
        }
        if data.len() != height * width {
            return Err(Error::shape("image data", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maps 8-bit intensities to [-1, 1] via `v / 127.5 - 1`.
    pub fn from_gray8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            height: h as usize,
            width: w as usize,
            data: img.pixels().map(|p| p.0[0] as f32 / 127.5 - 1.0).collect(),
        }
    }

    /// Inverse of [`Image::from_gray8`], clamping to the 8-bit range.
    pub fn to_gray8(&self) -> GrayImage {
        let raw = self
            .data
            .iter()
            .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("sized buffer")
    }

    pub(crate) fn to_luma_f32(&self) -> ImageBuffer<Luma<f32>, Vec<f32>> {
        ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("sized buffer")
    }

    pub(crate) fn from_luma_f32(buf: ImageBuffer<Luma<f32>, Vec<f32>>) -> Self {
        let (w, h) = buf.dimensions();
        Self {
            height: h as usize,
            width: w as usize,
            data: buf.into_raw(),
        }
    }

    /// Gaussian blur with standard deviation `sigma` pixels.
    pub fn blurred(&self, sigma: f32) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        Self::from_luma_f32(imageops::blur(&self.to_luma_f32(), sigma))
    }

    /// Bilinear resize to exactly `height` x `width`, ignoring aspect ratio.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let out = imageops::resize(
            &self.to_luma_f32(),
            width as u32,
            height as u32,
            FilterType::Triangle,
        );
        Self::from_luma_f32(out)
    }
}

pub fn decode_gray8(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.to_luma8();
    if gray.width() == 0 || gray.height() == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: "image has zero size".into(),
        });
    }
    Ok(gray)
}

/// Resizes an 8-bit grayscale image to `height` x `width` and normalizes it
/// to [-1, 1].
pub fn preprocess_gray8(img: &GrayImage, height: usize, width: usize) -> Result<Image> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidInput("image has zero size".into()));
    }
    let img = if img.width() as usize == width && img.height() as usize == height {
        img.clone()
    } else {
        imageops::resize(img, width as u32, height as u32, FilterType::Triangle)
    };
    Ok(Image::from_gray8(&img))
}

/// Decodes the file at `path` and preprocesses it.
pub fn preprocess(path: &Path, height: usize, width: usize) -> Result<Image> {
    preprocess_gray8(&decode_gray8(path)?, height, width)
}
