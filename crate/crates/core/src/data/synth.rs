//! Procedural medicine-box images.
//!
//! A class is a (palette colour, stripe layout, glyph) triple drawn on a
//! portrait box. Classes 0 and 1 share colour and stripes and differ only in
//! the glyph: a large filled disc against class 1's plus sign. Every glyph and stripe layout is mirror-symmetric, so horizontal
//! flips never turn one class into another.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{ClassEntry, DatasetManifest, Sample, MANIFEST_VERSION};
use super::derive_seed;
use crate::error::{Error, Result};

const PALETTE: [[u8; 3]; 10] = [
    [200, 40, 40],
    [40, 90, 200],
    [40, 160, 70],
    [230, 170, 30],
    [130, 60, 170],
    [30, 170, 180],
    [235, 110, 160],
    [120, 80, 40],
    [90, 90, 100],
    [240, 240, 225],
];
const STRIPES: usize = 4;
const GLYPHS: usize = 8;
/// Only class 0 uses this glyph.
const TWIN_GLYPH: usize = GLYPHS;

/// Appearance of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassStyle {
    pub color: usize,
    pub stripes: usize,
    pub glyph: usize,
}

impl ClassStyle {
    pub fn of(class: usize) -> ClassStyle {
        if class == 0 {
            // the confusable twin of class 1
            return ClassStyle {
                glyph: TWIN_GLYPH,
                ..Self::of(1)
            };
        }
        let i = class - 1;
        ClassStyle {
            color: i % PALETTE.len(),
            stripes: (i / PALETTE.len()) % STRIPES,
            glyph: (i + i / PALETTE.len()) % GLYPHS,
        }
    }
}

/// Per-image nuisance parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    /// Multiplier on every pixel.
    pub brightness: f32,
    pub scale: f32,
    pub rotation_deg: f32,
    /// Box center offset as a fraction of the image size.
    pub offset: (f32, f32),
    pub background: ([u8; 3], [u8; 3]),
    pub noise_std: f32,
}

impl Jitter {
    /// Centered, upright, unscaled box on a neutral background.
    pub fn canonical() -> Jitter {
        Jitter {
            brightness: 1.0,
            scale: 1.0,
            rotation_deg: 0.0,
            offset: (0.0, 0.0),
            background: ([128, 128, 128], [128, 128, 128]),
            noise_std: 0.0,
        }
    }

    /// Brightness ±20%, scale ±15%, rotation ±10°, small shifts, random background.
    pub fn random(rng: &mut impl Rng) -> Jitter {
        let mut color = || std::array::from_fn(|_| rng.random_range(0..=255u8));
        let background = (color(), color());
        Jitter {
            brightness: rng.random_range(0.8..=1.2),
            scale: rng.random_range(0.85..=1.15),
            rotation_deg: rng.random_range(-10.0..=10.0),
            offset: (rng.random_range(-0.06..=0.06), rng.random_range(-0.06..=0.06)),
            background,
            noise_std: 4.0,
        }
    }
}

fn stripe(kind: usize, u: f32, v: f32) -> bool {
    match kind {
        0 => (-0.85..-0.55).contains(&v),
        1 => (-0.85..-0.7).contains(&v) || (0.6..0.75).contains(&v),
        2 => (0.65..0.9).contains(&u.abs()),
        _ => (0.55..0.85).contains(&v),
    }
}

/// Glyph membership in glyph-local coordinates (unit = box half-width).
fn glyph(kind: usize, u: f32, v: f32) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let r = (u * u + v * v).sqrt();
    match kind {
        0 => (au < 0.12 && av < 0.45) || (av < 0.12 && au < 0.45),
        1 => (0.28..0.45).contains(&r),
        2 => au < 0.35 && av < 0.35,
        3 => (au - av).abs() < 0.12 && au.max(av) < 0.42,
        4 => au + av < 0.45,
        5 => (-0.4..0.35).contains(&v) && au < (v + 0.4) * 0.55,
        6 => r < 0.22,
        TWIN_GLYPH => r < 0.45,
        _ => au < 0.45 && ((v - 0.2).abs() < 0.08 || (v + 0.2).abs() < 0.08),
    }
}

/// Renders one `size`×`size` image of `class`. `rng` only drives pixel noise.
pub fn render(class: usize, size: u32, jitter: &Jitter, rng: &mut impl Rng) -> RgbImage {
    let style = ClassStyle::of(class);
    let base = PALETTE[style.color];
    let luminance = 0.3 * base[0] as f32 + 0.59 * base[1] as f32 + 0.11 * base[2] as f32;
    let ink = if luminance > 140.0 { [25.0, 25.0, 35.0] } else { [245.0, 245.0, 240.0] };
    let stripe_color: [f32; 3] = std::array::from_fn(|c| 255.0 - base[c] as f32 * 0.8);
    let s = size as f32;
    let half_w = 0.30 * s * jitter.scale;
    let half_h = 0.38 * s * jitter.scale;
    let (sin, cos) = jitter.rotation_deg.to_radians().sin_cos();
    let center = (s / 2.0 + jitter.offset.0 * s, s / 2.0 + jitter.offset.1 * s);
    let noise = Normal::new(0.0f32, jitter.noise_std.max(1e-6)).unwrap();

    // 2x2 supersampling keeps edges from aliasing into class-specific artifacts
    let shade = |px: f32, py: f32| -> [f32; 3] {
        let (dx, dy) = (px - center.0, py - center.1);
        let u = (cos * dx + sin * dy) / half_w;
        let v = (-sin * dx + cos * dy) / half_h;
        if u.abs() > 1.0 || v.abs() > 1.0 {
            let t = py / s;
            let (a, b) = jitter.background;
            return std::array::from_fn(|c| a[c] as f32 * (1.0 - t) + b[c] as f32 * t);
        }
        let gu = u;
        let gv = (v - 0.05) * half_h / half_w;
        if glyph(style.glyph, gu, gv) {
            ink
        } else if stripe(style.stripes, u, v) {
            stripe_color
        } else {
            base.map(f32::from)
        }
    };
    RgbImage::from_fn(size, size, |x, y| {
        let mut acc = [0.0f32; 3];
        for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
            let c = shade(x as f32 + ox, y as f32 + oy);
            for i in 0..3 {
                acc[i] += c[i] / 4.0;
            }
        }
        let n = if jitter.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
        Rgb(acc.map(|v| (v * jitter.brightness + n).round().clamp(0.0, 255.0) as u8))
    })
}

/// Noise-free, centered, upright render of `class`.
pub fn render_canonical(class: usize, size: u32) -> RgbImage {
    render(class, size, &Jitter::canonical(), &mut ChaCha8Rng::seed_from_u64(0))
}

/// What to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Images per class; its length is the class count.
    pub per_class: Vec<usize>,
    pub size: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn uniform(classes: usize, per_class: usize, seed: u64) -> Self {
        SynthSpec {
            per_class: vec![per_class; classes],
            size: 64,
            seed,
        }
    }

    /// `total` images spread as evenly as possible, earlier classes taking the remainder.
    pub fn with_total(classes: usize, total: usize, seed: u64) -> Self {
        let base = total / classes.max(1);
        let extra = total % classes.max(1);
        SynthSpec {
            per_class: (0..classes).map(|c| base + usize::from(c < extra)).collect(),
            size: 64,
            seed,
        }
    }
}

/// Writes PNGs under `out_dir/images/` plus `out_dir/manifest.json`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let classes = spec.per_class.len();
    if classes < 2 {
        return Err(Error::invalid("generate_synthetic", format!("need at least 2 classes, got {classes}")));
    }
    if spec.size < 8 {
        return Err(Error::invalid("generate_synthetic", format!("image size {} is too small", spec.size)));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("images"))?;
    let mut samples = Vec::new();
    for (class, &count) in spec.per_class.iter().enumerate() {
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[class as u64, i as u64]));
            let jitter = Jitter::random(&mut rng);
            let img = render(class, spec.size, &jitter, &mut rng);
            let rel = format!("images/c{class:02}_{i:03}.png");
            img.save(out_dir.join(&rel))?;
            samples.push(Sample {
                path: rel.into(),
                class,
                source: "synthetic".into(),
            });
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        classes: (0..classes)
            .map(|c| ClassEntry {
                id: format!("c{c:02}"),
                name: format!("Synthetic box {c:02}"),
            })
            .collect(),
        samples,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn styles_are_unique_for_the_full_catalog() {
        let styles: Vec<ClassStyle> = (0..63).map(ClassStyle::of).collect();
        for i in 0..styles.len() {
            for j in i + 1..styles.len() {
                assert_ne!(styles[i], styles[j], "classes {i} and {j}");
            }
        }
        let (a, b) = (styles[0], styles[1]);
        assert_eq!((a.color, a.stripes), (b.color, b.stripes));
        assert_ne!(a.glyph, b.glyph);
    }

    #[test]
    fn glyphs_are_mirror_symmetric() {
        for kind in 0..GLYPHS {
            for i in -50..=50 {
                for j in -50..=50 {
                    let (u, v) = (i as f32 / 50.0, j as f32 / 50.0);
                    assert_eq!(glyph(kind, u, v), glyph(kind, -u, v), "glyph {kind} at {u},{v}");
                }
            }
        }
    }
}
