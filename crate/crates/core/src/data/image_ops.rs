use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel `(x - mean) / std` applied after scaling pixels to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Bilinear sample of channel `c` at continuous pixel coordinates, edges clamped.
fn bilinear(img: &RgbImage, x: f32, y: f32, c: usize) -> f32 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let px = |xi: i64, yi: i64| img.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32)[c] as f32;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let top = px(xi, yi) * (1.0 - fx) + px(xi + 1, yi) * fx;
    let bottom = px(xi, yi + 1) * (1.0 - fx) + px(xi + 1, yi + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize with half-pixel centers; returns planar `[3, h, w]` values in 0..=255.
pub fn resize_bilinear(img: &RgbImage, height: usize, width: usize) -> Result<Tensor<f32>> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::invalid("resize", "image has a zero dimension"));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize", "target size has a zero dimension"));
    }
    let sx = img.width() as f32 / width as f32;
    let sy = img.height() as f32 / height as f32;
    let mut out = Vec::with_capacity(3 * height * width);
    for c in 0..3 {
        for oy in 0..height {
            let y = (oy as f32 + 0.5) * sy - 0.5;
            for ox in 0..width {
                let x = (ox as f32 + 0.5) * sx - 0.5;
                out.push(bilinear(img, x, y, c));
            }
        }
    }
    Tensor::new(vec![3, height, width], out)
}

/// Resize to `(height, width)`, scale to [0, 1] and normalize: `[3, height, width]`.
pub fn preprocess(img: &RgbImage, size: (usize, usize), norm: &Normalization) -> Result<Tensor<f32>> {
    let mut t = resize_bilinear(img, size.0, size.1)?;
    let plane = size.0 * size.1;
    for (c, chunk) in t.data_mut().chunks_exact_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v / 255.0 - norm.mean[c]) / norm.std[c];
        }
    }
    Ok(t)
}

/// Inverse of the scaling and normalization in [`preprocess`]: values in 0..=255.
pub fn unnormalize(t: &Tensor<f32>, norm: &Normalization) -> Result<Tensor<f32>> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape("unnormalize", format!("expected [3, H, W], got {shape:?}")));
    }
    let plane = shape[1] * shape[2];
    let mut out = t.clone();
    for (c, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v * norm.std[c] + norm.mean[c]) * 255.0;
        }
    }
    Ok(out)
}

/// Training-time augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub hflip_prob: f64,
    /// Inclusive range of rotation angles in degrees.
    pub rotation_range_deg: (f64, f64),
    pub enabled: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            hflip_prob: 0.5,
            rotation_range_deg: (-15.0, 15.0),
            enabled: true,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        AugmentPolicy {
            enabled: false,
            ..Self::default()
        }
    }
}

pub fn hflip(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

/// Rotates counter-clockwise by `degrees` about the image center, bilinear
/// sampling with edge replication. A zero angle returns an exact copy.
pub fn rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (sin, cos) = (degrees.to_radians() as f32).sin_cos();
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    RgbImage::from_fn(w, h, |x, y| {
        // inverse mapping: where does this output pixel come from
        let (dx, dy) = (x as f32 - cx, y as f32 - cy);
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        Rgb(std::array::from_fn(|c| bilinear(img, sx, sy, c).round().clamp(0.0, 255.0) as u8))
    })
}

/// Random horizontal flip, then a uniform random rotation.
pub fn augment(img: &RgbImage, policy: &AugmentPolicy, rng: &mut impl Rng) -> RgbImage {
    if !policy.enabled {
        return img.clone();
    }
    let flip = rng.random_bool(policy.hflip_prob.clamp(0.0, 1.0));
    let (lo, hi) = policy.rotation_range_deg;
    let angle = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let img = if flip { hflip(img) } else { img.clone() };
    rotate(&img, angle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rotation_is_exact() {
        let img = RgbImage::from_fn(5, 4, |x, y| Rgb([x as u8 * 40, y as u8 * 60, 7]));
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn half_turn_reverses_pixels() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 60, (x * y) as u8]));
        let r = rotate(&img, 180.0);
        for (x, y, p) in r.enumerate_pixels() {
            assert_eq!(*p, *img.get_pixel(4 - x, 2 - y));
        }
    }

    #[test]
    fn disabled_policy_is_identity() {
        let img = RgbImage::from_fn(6, 6, |x, y| Rgb([(x * 30) as u8, (y * 30) as u8, 0]));
        let mut rng = rand::rng();
        assert_eq!(augment(&img, &AugmentPolicy::disabled(), &mut rng), img);
    }
}
