//! Seeded photometric and geometric augmentation of training images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{sample_bilinear, SamplingGrid};
use crate::imaging::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSettings {
    pub affine_prob: f64,
    /// Maximum rotation in degrees.
    pub rotation_deg: f64,
    pub shear: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub elastic_prob: f64,
    /// Displacement strength and smoothing in pixels of a 64-pixel-high
    /// canvas; both scale with the actual image height.
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub brightness_prob: f64,
    pub brightness: f64,
    pub contrast_prob: f64,
    pub contrast_min: f64,
    pub contrast_max: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            affine_prob: 0.5,
            rotation_deg: 5.0,
            shear: 0.3,
            scale_min: 0.9,
            scale_max: 1.1,
            elastic_prob: 0.5,
            elastic_alpha: 34.0,
            elastic_sigma: 4.0,
            brightness_prob: 0.5,
            brightness: 0.2,
            contrast_prob: 0.5,
            contrast_min: 0.8,
            contrast_max: 1.2,
        }
    }
}

impl AugmentSettings {
    /// Settings that leave every image unchanged.
    pub fn none() -> Self {
        Self {
            affine_prob: 0.0,
            elastic_prob: 0.0,
            brightness_prob: 0.0,
            contrast_prob: 0.0,
            ..Self::default()
        }
    }
}

fn symmetric(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    if r > 0.0 {
        rng.gen_range(-r..=r)
    } else {
        0.0
    }
}

fn between(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Applies each enabled augmentation with its probability. The result
/// depends only on the image, the settings and `seed`.
pub fn augment(image: &Image, settings: &AugmentSettings, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (image.height, image.width);
    let mut out = image.clone();

    if rng.gen_bool(settings.affine_prob.clamp(0.0, 1.0)) {
        let theta = symmetric(&mut rng, settings.rotation_deg).to_radians();
        let shear = symmetric(&mut rng, settings.shear);
        let scale = between(&mut rng, settings.scale_min, settings.scale_max);
        // forward map A = R * Sh * scale; sample with its inverse
        let (c, s) = (theta.cos(), theta.sin());
        let a = [
            [c * scale, (c * shear - s) * scale],
            [s * scale, (s * shear + c) * scale],
        ];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ];
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        out = remap(&out, |px, py| {
            let (dx, dy) = (px - cx, py - cy);
            (
                inv[0][0] * dx + inv[0][1] * dy + cx,
                inv[1][0] * dx + inv[1][1] * dy + cy,
            )
        });
    }

    if rng.gen_bool(settings.elastic_prob.clamp(0.0, 1.0)) {
        let k = h as f64 / 64.0;
        let field = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
            Image {
                height: h,
                width: w,
                data: raw,
            }
            .blurred((settings.elastic_sigma * k) as f32)
        };
        let fx = field(&mut rng);
        let fy = field(&mut rng);
        let alpha = settings.elastic_alpha * k;
        out = remap(&out, |px, py| {
            let i = py as usize * w + px as usize;
            (px + alpha * fx.data[i] as f64, py + alpha * fy.data[i] as f64)
        });
    }

    let offset = if rng.gen_bool(settings.brightness_prob.clamp(0.0, 1.0)) {
        symmetric(&mut rng, settings.brightness)
    } else {
        0.0
    };
    let gain = if rng.gen_bool(settings.contrast_prob.clamp(0.0, 1.0)) {
        between(&mut rng, settings.contrast_min, settings.contrast_max)
    } else {
        1.0
    };
    if offset != 0.0 || gain != 1.0 {
        for v in &mut out.data {
            *v = ((*v as f64) * gain + offset).clamp(-1.0, 1.0) as f32;
        }
    }
    out
}

/// Resamples `image` so output pixel `(x, y)` reads source pixel `map(x, y)`.
fn remap(image: &Image, map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (h, w) = (image.height, image.width);
    let norm = |v: f64, n: usize| if n > 1 { 2.0 * v / (n as f64 - 1.0) - 1.0 } else { 0.0 };
    let mut coords = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            coords.push([norm(sx, w), norm(sy, h)]);
        }
    }
    sample_bilinear(
        image,
        &SamplingGrid {
            height: h,
            width: w,
            coords,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        let data = (0..32 * 128)
            .map(|i| (((i * 31) % 97) as f32 / 48.5) - 1.0)
            .collect();
        Image::new(32, 128, data).unwrap()
    }

    #[test]
    fn zero_probabilities_leave_the_image_alone() {
        let img = sample();
        for seed in 0..5 {
            assert_eq!(augment(&img, &AugmentSettings::none(), seed), img);
        }
    }

    #[test]
    fn neutral_photometric_settings_are_identity() {
        let img = sample();
        let s = AugmentSettings {
            brightness_prob: 1.0,
            brightness: 0.0,
            contrast_prob: 1.0,
            contrast_min: 1.0,
            contrast_max: 1.0,
            ..AugmentSettings::none()
        };
        assert_eq!(augment(&img, &s, 3), img);
    }

    #[test]
    fn deterministic_given_seed() {
        let img = sample();
        let s = AugmentSettings {
            affine_prob: 1.0,
            elastic_prob: 1.0,
            brightness_prob: 1.0,
            contrast_prob: 1.0,
            ..AugmentSettings::default()
        };
        let a = augment(&img, &s, 42);
        assert_eq!(a, augment(&img, &s, 42));
        assert_ne!(a, augment(&img, &s, 43));
        assert_ne!(a, img);
        assert!(a.data.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn identity_affine_is_exact() {
        let img = sample();
        let s = AugmentSettings {
            affine_prob: 1.0,
            rotation_deg: 0.0,
            shear: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            ..AugmentSettings::none()
        };
        let out = augment(&img, &s, 1);
        let err = out
            .data
            .iter()
            .zip(&img.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-5, "{err}");
    }
}
