use std::collections::HashSet;
use std::path::Path;

use image::{Rgb, RgbImage};
use medbox_core::data::*;
use medbox_core::error::Error;
use medbox_core::training::TrainSet;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn write_png(dir: &Path, name: &str) {
    RgbImage::from_pixel(4, 4, Rgb([10, 20, 30])).save(dir.join(name)).unwrap();
}

#[test]
fn two_class_manifest_loads_in_order() {
    let dir = tempfile::tempdir().unwrap();
    for n in ["a1.png", "a2.png", "b1.png"] {
        write_png(dir.path(), n);
    }
    let json = r#"{
        "version": 1,
        "classes": [{"id": "zeta", "name": "Zeta 10mg"}, {"id": "alpha", "name": "Alpha 5mg"}],
        "samples": [
            {"path": "a1.png", "class": 0, "source": "phone"},
            {"path": "b1.png", "class": 1, "source": "phone"},
            {"path": "a2.png", "class": 0, "source": "web"}
        ]
    }"#;
    std::fs::write(dir.path().join("m.json"), json).unwrap();
    let m = load_manifest(dir.path().join("m.json")).unwrap();
    let ids: Vec<&str> = m.classes.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["zeta", "alpha"]);
    assert_eq!(m.labels(), [0, 1, 0]);
    assert_eq!(m.class_histogram(), [2, 1]);
    assert_eq!(ImageCollection::load(&m).unwrap().images.len(), 3);
}

#[test]
fn manifest_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path(), "x.png");
    let missing = load_manifest(dir.path().join("nope.json")).unwrap_err();
    assert!(matches!(missing, Error::ManifestMissing(_)), "{missing}");

    let unknown = r#"{"version": 1, "classes": [{"id": "a", "name": "A"}],
        "samples": [{"path": "x.png", "class": 0}, {"path": "weird.png", "class": 4}]}"#;
    std::fs::write(dir.path().join("u.json"), unknown).unwrap();
    let err = load_manifest(dir.path().join("u.json")).unwrap_err();
    assert!(matches!(err, Error::ManifestSchema(_)), "{err}");
    assert!(err.to_string().contains("weird.png"), "{err}");

    std::fs::write(dir.path().join("s.json"), r#"{"version": 1, "classes": []}"#).unwrap();
    assert!(matches!(load_manifest(dir.path().join("s.json")), Err(Error::ManifestSchema(_))));

    let dangling = r#"{"version": 1, "classes": [{"id": "a", "name": "A"}],
        "samples": [{"path": "x.png", "class": 0}, {"path": "gone.png", "class": 0}]}"#;
    std::fs::write(dir.path().join("d.json"), dangling).unwrap();
    let err = load_manifest(dir.path().join("d.json")).unwrap_err();
    assert!(matches!(&err, Error::DanglingImage(p) if p.ends_with("gone.png")), "{err}");
}

fn manifest_with(sizes: &[usize]) -> DatasetManifest {
    DatasetManifest {
        version: MANIFEST_VERSION,
        classes: (0..sizes.len())
            .map(|c| ClassEntry { id: format!("k{c}"), name: format!("K{c}") })
            .collect(),
        samples: sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| Sample { path: format!("{c}_{i}.png").into(), class: c, source: String::new() }))
            .collect(),
        root: Default::default(),
    }
}

fn per_class(m: &DatasetManifest, idx: &[usize]) -> Vec<usize> {
    let mut h = vec![0; m.classes.len()];
    for &i in idx {
        h[m.samples[i].class] += 1;
    }
    h
}

#[test]
fn ten_by_ten_gives_two_per_class() {
    let m = manifest_with(&[10; 10]);
    let plan = make_splits(&m, 0.8, 10, 5).unwrap();
    assert_eq!(plan.repetitions.len(), 10);
    for split in &plan.repetitions {
        assert_eq!(split.test.len(), 20);
        assert_eq!(per_class(&m, &split.test), vec![2; 10]);
    }
    assert_ne!(plan.repetitions[0], plan.repetitions[1]);
}

#[test]
fn small_class_keeps_one_test_sample() {
    let m = manifest_with(&[3, 10]);
    let plan = make_splits(&m, 0.8, 4, 1).unwrap();
    for split in &plan.repetitions {
        assert_eq!(per_class(&m, &split.test), [1, 2]);
    }
    assert_eq!(test_count(3, 0.8), 1);
    assert_eq!(test_count(2, 0.8), 1);
}

#[test]
fn singleton_classes_are_listed() {
    let m = manifest_with(&[5, 1, 4, 1]);
    match make_splits(&m, 0.8, 2, 0) {
        Err(Error::ClassTooSmall(names)) => {
            assert_eq!(names.len(), 2);
            assert!(names[0].starts_with("k1") && names[1].starts_with("k3"), "{names:?}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn synthetic_catalog_scale_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { size: 8, ..SynthSpec::with_total(63, 978, 0) };
    assert!(spec.per_class.iter().all(|&n| n == 15 || n == 16));
    generate_synthetic(&spec, dir.path()).unwrap();
    let m = load_manifest(dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.samples.len(), 978);
    assert_eq!(m.class_histogram(), spec.per_class);

    // counting oracle: rebuild class membership from scratch and check every repetition
    let plan = make_splits(&m, 0.8, 10, 0).unwrap();
    for split in &plan.repetitions {
        let train: HashSet<usize> = split.train.iter().copied().collect();
        let test: HashSet<usize> = split.test.iter().copied().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 978);
        for c in 0..63 {
            let n = m.samples.iter().filter(|s| s.class == c).count();
            let t = split.test.iter().filter(|&&i| m.samples[i].class == c).count();
            let want = ((0.2 * n as f64).round() as usize).max(1);
            assert_eq!(t, want, "class {c}");
        }
    }
}

proptest! {
    #[test]
    fn splits_partition_every_class(sizes in prop::collection::vec(2usize..30, 2..8), reps in 1usize..4, seed in any::<u64>()) {
        let m = manifest_with(&sizes);
        let plan = make_splits(&m, 0.8, reps, seed).unwrap();
        for split in &plan.repetitions {
            let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..m.samples.len()).collect::<Vec<_>>());
            let got = per_class(&m, &split.test);
            for (c, &n) in sizes.iter().enumerate() {
                prop_assert_eq!(got[c], test_count(n, 0.8));
            }
        }
        prop_assert_eq!(&plan, &make_splits(&m, 0.8, reps, seed).unwrap());
    }
}

const HALF: Normalization = Normalization { mean: [0.5; 3], std: [0.5; 3] };
const UNIT: Normalization = Normalization { mean: [0.0; 3], std: [1.0; 3] };

#[test]
fn gray_image_normalizes_to_constant() {
    let img = RgbImage::from_pixel(13, 9, Rgb([128, 128, 128]));
    let t = preprocess(&img, (7, 5), &HALF).unwrap();
    assert_eq!(t.shape(), &[3, 7, 5]);
    let want = (128.0 / 255.0 - 0.5) / 0.5;
    assert!(t.data().iter().all(|v| (v - want).abs() < 1e-6));
    assert!((want - 0.0039).abs() < 1e-4);
}

#[test]
fn same_size_resize_is_identity() {
    let img = RgbImage::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) });
    let t = resize_bilinear(&img, 2, 2).unwrap();
    assert_eq!(t.data(), &[255., 0., 0., 255., 255., 0., 0., 255., 255., 0., 0., 255.]);
}

/// Reference resampler written directly from the half-pixel-center convention.
fn reference_resize(img: &RgbImage, h: usize, w: usize) -> Vec<f64> {
    let (iw, ih) = (img.width() as f64, img.height() as f64);
    let at = |x: i64, y: i64, c: usize| {
        let x = x.max(0).min(iw as i64 - 1) as u32;
        let y = y.max(0).min(ih as i64 - 1) as u32;
        img.get_pixel(x, y)[c] as f64
    };
    let mut out = Vec::new();
    for c in 0..3 {
        for oy in 0..h {
            for ox in 0..w {
                let sx = (ox as f64 + 0.5) * iw / w as f64 - 0.5;
                let sy = (oy as f64 + 0.5) * ih / h as f64 - 0.5;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (ax, ay) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                let v = at(x0, y0, c) * (1.0 - ax) * (1.0 - ay)
                    + at(x0 + 1, y0, c) * ax * (1.0 - ay)
                    + at(x0, y0 + 1, c) * (1.0 - ax) * ay
                    + at(x0 + 1, y0 + 1, c) * ax * ay;
                out.push(v / 255.0);
            }
        }
    }
    out
}

#[test]
fn resize_matches_reference() {
    let img = RgbImage::from_fn(100, 80, |x, y| Rgb([(x * 255 / 99) as u8, (y * 255 / 79) as u8, ((x * 7 + y * 13) % 256) as u8]));
    let t = preprocess(&img, (224, 224), &UNIT).unwrap();
    let r = reference_resize(&img, 224, 224);
    let worst = t.data().iter().zip(&r).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "max deviation {worst}");
}

#[test]
fn unnormalize_recovers_resize() {
    let img = RgbImage::from_fn(31, 17, |x, y| Rgb([(x * 8) as u8, (y * 15) as u8, ((x ^ y) * 9) as u8]));
    let resized = resize_bilinear(&img, 20, 24).unwrap();
    let back = unnormalize(&preprocess(&img, (20, 24), &Normalization::IMAGENET).unwrap(), &Normalization::IMAGENET).unwrap();
    for (a, b) in resized.data().iter().zip(back.data()) {
        assert!((a / 255.0 - b / 255.0).abs() < 1e-6);
    }
    assert!(preprocess(&RgbImage::new(0, 4), (4, 4), &UNIT).is_err());
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[test]
fn augmentation_basics() {
    let img = render_canonical(5, 48);
    assert_eq!(hflip(&hflip(&img)), img);
    assert_eq!(rotate(&img, 0.0), img);
    let no_op = AugmentPolicy { hflip_prob: 0.0, rotation_range_deg: (0.0, 0.0), enabled: true };
    assert_eq!(augment(&img, &no_op, &mut ChaCha8Rng::seed_from_u64(1)), img);
}

#[test]
fn augmented_tensor_golden_hash() {
    let img = render_canonical(2, 48);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let out = augment(&img, &AugmentPolicy::default(), &mut rng);
    let t = preprocess(&out, (32, 32), &Normalization::IMAGENET).unwrap();
    let h = fnv1a(t.data().iter().flat_map(|v| v.to_le_bytes()));
    assert_eq!(h, GOLDEN, "hash {h:#018x}");
}

const GOLDEN: u64 = 0x617a_a292_371c_a226;

#[test]
fn eval_views_are_stable_and_train_views_vary() {
    let images = (0..4).map(|c| render_canonical(c, 32)).collect();
    let data = ImageCollection { images, labels: vec![0, 1, 2, 3], num_classes: 4 };
    let eval = data.subset(&[1, 3], ViewConfig::eval(24));
    assert_eq!(eval.batch(&[0, 1], 1).unwrap(), eval.batch(&[0, 1], 9).unwrap());
    let train = data.subset(&[1, 3], ViewConfig::train(24, 4));
    let epochs: Vec<_> = (1..6).map(|e| train.batch(&[0, 1], e).unwrap()).collect();
    assert!(epochs.windows(2).any(|w| w[0] != w[1]));
    assert_eq!(train.batch(&[0, 1], 3).unwrap(), epochs[2]);
    assert_eq!(train.labels(), [1, 3]);
}

#[test]
fn generator_is_deterministic_and_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = SynthSpec { size: 32, ..SynthSpec::uniform(8, 40, 3) };
    let ma = generate_synthetic(&spec, a.path()).unwrap();
    generate_synthetic(&spec, b.path()).unwrap();
    assert_eq!(ma.samples.len(), 320);
    assert_eq!(ma.class_histogram(), vec![40; 8]);
    load_manifest(a.path().join("manifest.json")).unwrap();
    for s in &ma.samples {
        let (x, y) = (std::fs::read(a.path().join(&s.path)).unwrap(), std::fs::read(b.path().join(&s.path)).unwrap());
        assert_eq!(x, y, "{}", s.path.display());
    }
    assert!(generate_synthetic(&SynthSpec::uniform(1, 4, 0), a.path()).is_err());
}

/// Leave-one-out 1-NN on raw pixels: the glyph-only pair should dominate the errors.
#[test]
fn pixel_knn_confuses_the_glyph_pair_most() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic(&SynthSpec { size: 24, ..SynthSpec::uniform(8, 40, 11) }, dir.path()).unwrap();
    let data = ImageCollection::load(&m).unwrap();
    let px: Vec<Vec<f32>> = data.images.iter().map(|im| im.as_raw().iter().map(|&v| v as f32).collect()).collect();
    let mut confusions = vec![vec![0u32; 8]; 8];
    for i in 0..px.len() {
        let nearest = (0..px.len())
            .filter(|&j| j != i)
            .min_by(|&a, &b| {
                let d = |j: usize| px[i].iter().zip(&px[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f32>();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        confusions[data.labels[i]][data.labels[nearest]] += 1;
    }
    let mut pairs: Vec<((usize, usize), u32)> = (0..8)
        .flat_map(|a| (a + 1..8).map(move |b| (a, b)))
        .map(|(a, b)| ((a, b), confusions[a][b] + confusions[b][a]))
        .collect();
    pairs.sort_by_key(|p| std::cmp::Reverse(p.1));
    assert_eq!(pairs[0].0, (0, 1), "{pairs:?}");
    assert!(pairs[0].1 > pairs[1].1, "{pairs:?}");
}
