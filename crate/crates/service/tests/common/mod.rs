#![allow(dead_code)]

use std::io::Cursor;

use image::{Rgb, RgbImage};
use medbox_core::densenet::{ModelConfig, Network};
use medbox_service::{Engine, EngineConfig, MedicineRecord, PilSections};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 4;

pub fn records(classes: usize) -> Vec<MedicineRecord> {
    (0..classes)
        .map(|i| MedicineRecord {
            id: format!("med-{i}"),
            name: format!("Medicine {i}"),
            posology: format!("{} tablets daily", i + 1),
            pil: PilSections {
                usage: format!("usage {i}"),
                warnings: format!("warnings {i}"),
                interactions: format!("interactions {i}"),
            },
            class_index: i,
        })
        .collect()
}

/// Untrained but deterministic tiny network; confidences are spread out.
pub fn network() -> Network<f32> {
    Network::build(ModelConfig::desk(4, 0.5, vec![1, 2], CLASSES, 24), 5).unwrap()
}

pub fn engine(lambda: f64) -> Engine {
    Engine::new(network(), records(CLASSES), EngineConfig { lambda, ..EngineConfig::default() }).unwrap()
}

pub fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

pub fn noise(seed: u64, w: u32, h: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

pub fn frames() -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = (0..6).map(|s| png(&noise(s, 24, 24))).collect();
    out.extend((0..4).map(|c| png(&medbox_core::data::render_canonical(c, 40))));
    out
}
