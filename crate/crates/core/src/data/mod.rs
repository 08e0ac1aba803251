//! Dataset manifests, stratified splits, image preprocessing and
//! augmentation, and the synthetic box-image generator.

mod dataset;
mod image_ops;
mod manifest;
mod splits;
pub mod synth;

pub use dataset::{ImageCollection, ImageSubset, ViewConfig};
pub use image_ops::{augment, hflip, preprocess, resize_bilinear, rotate, unnormalize, AugmentPolicy, Normalization};
pub use manifest::{load_manifest, ClassEntry, DatasetManifest, Sample, MANIFEST_VERSION};
pub use splits::{make_splits, test_count, Split, SplitPlan};
pub use synth::{generate_synthetic, render_canonical, SynthSpec};

/// Mixes `parts` into `base` (splitmix64 finalizer per step) to get
/// independent, reproducible sub-seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
