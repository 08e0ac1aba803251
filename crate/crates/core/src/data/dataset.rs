use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_ops::{augment, preprocess, AugmentPolicy, Normalization};
use super::{derive_seed, DatasetManifest};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::TrainSet;

/// Every image of a manifest decoded into memory.
#[derive(Debug, Clone)]
pub struct ImageCollection {
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ImageCollection {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let images = manifest
            .samples
            .iter()
            .map(|s| {
                let path = manifest.resolve(s);
                if !path.is_file() {
                    return Err(Error::DanglingImage(path));
                }
                Ok(image::open(&path)?.to_rgb8())
            })
            .collect::<Result<_>>()?;
        Ok(ImageCollection {
            images,
            labels: manifest.labels(),
            num_classes: manifest.classes.len(),
        })
    }

    /// A view over `indices` that resizes to `size`, normalizes, and
    /// optionally augments.
    pub fn subset(&self, indices: &[usize], view: ViewConfig) -> ImageSubset<'_> {
        ImageSubset {
            source: self,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
            view,
        }
    }
}

/// How a subset turns images into network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConfig {
    pub size: (usize, usize),
    pub norm: Normalization,
    pub augment: AugmentPolicy,
    /// Seeds augmentation together with the epoch and sample index.
    pub seed: u64,
}

impl ViewConfig {
    pub fn eval(size: usize) -> Self {
        ViewConfig {
            size: (size, size),
            norm: Normalization::IMAGENET,
            augment: AugmentPolicy::disabled(),
            seed: 0,
        }
    }

    pub fn train(size: usize, seed: u64) -> Self {
        ViewConfig {
            augment: AugmentPolicy::default(),
            seed,
            ..Self::eval(size)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageSubset<'a> {
    source: &'a ImageCollection,
    indices: Vec<usize>,
    labels: Vec<usize>,
    view: ViewConfig,
}

impl ImageSubset<'_> {
    /// Collection-level index of the `i`th subset member.
    pub fn source_index(&self, i: usize) -> usize {
        self.indices[i]
    }

    /// One network input; augmentation depends only on (seed, epoch, source index).
    pub fn input(&self, i: usize, epoch: usize) -> Result<Tensor<f32>> {
        let global = self.indices[i];
        let img = &self.source.images[global];
        if self.view.augment.enabled {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.view.seed, &[epoch as u64, global as u64]));
            preprocess(&augment(img, &self.view.augment, &mut rng), self.view.size, &self.view.norm)
        } else {
            preprocess(img, self.view.size, &self.view.norm)
        }
    }
}

impl TrainSet for ImageSubset<'_> {
    fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn batch(&self, indices: &[usize], epoch: usize) -> Result<Tensor<f32>> {
        let items = indices.iter().map(|&i| self.input(i, epoch)).collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }
}
