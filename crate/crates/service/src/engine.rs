use std::path::PathBuf;
use std::time::Instant;

use image::{DynamicImage, RgbImage};
use medbox_core::data::{preprocess, Normalization};
use medbox_core::densenet::Network;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, MedicineRecord, MedicineSummary};
use crate::error::{Result, ServiceError};

pub const DEFAULT_LAMBDA: f64 = 0.85;
pub const MAX_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub model_path: PathBuf,
    pub catalog_path: PathBuf,
    /// Minimum top softmax score for a recognition; 0 disables the threshold.
    pub lambda: f64,
    pub top_k: usize,
    /// Frames whose longer side exceeds this are downscaled before preprocessing.
    pub max_frame_dim: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            model_path: PathBuf::new(),
            catalog_path: PathBuf::new(),
            lambda: DEFAULT_LAMBDA,
            top_k: MAX_TOP_K,
            max_frame_dim: 1024,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ServiceError::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.top_k == 0 || self.top_k > MAX_TOP_K {
            return Err(ServiceError::Config(format!("top_k must lie in 1..={MAX_TOP_K}, got {}", self.top_k)));
        }
        if self.max_frame_dim == 0 {
            return Err(ServiceError::Config("max_frame_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Recognized,
    BelowThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub class_index: usize,
    pub class_id: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub status: Status,
    /// Set only when recognized.
    pub medicine: Option<MedicineSummary>,
    /// Highest confidences first; kept for diagnostics even when suppressed.
    pub top: Vec<TopEntry>,
    /// True when `top` is below the threshold and must not be shown as a recognition.
    pub suppressed: bool,
    pub lambda: f64,
    pub latency_ms: f64,
}

impl ClassificationResult {
    /// Equality that ignores the measured latency.
    pub fn same_outcome(&self, other: &ClassificationResult) -> bool {
        ClassificationResult { latency_ms: 0.0, ..self.clone() } == ClassificationResult { latency_ms: 0.0, ..other.clone() }
    }
}

/// Summary served by the health endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub growth_rate: usize,
    pub compression: f64,
    pub classes: usize,
    pub input_size: [usize; 2],
    pub params: usize,
}

/// A loaded model plus its catalog; immutable and shareable across threads.
pub struct Engine {
    net: Network<f32>,
    catalog: Catalog,
    config: EngineConfig,
    norm: Normalization,
}

impl Engine {
    pub fn new(net: Network<f32>, records: Vec<MedicineRecord>, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let catalog = Catalog::new(records, net.config().num_classes)?;
        Ok(Engine {
            net,
            catalog,
            config,
            norm: Normalization::IMAGENET,
        })
    }

    /// Loads the model and catalog named in `config`; fails if they disagree.
    pub fn load(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let net = Network::load(&config.model_path)
            .map_err(|e| ServiceError::Config(format!("model {}: {e}", config.model_path.display())))?;
        let catalog = Catalog::load(&config.catalog_path, net.config().num_classes)?;
        Ok(Engine {
            net,
            catalog,
            config,
            norm: Normalization::IMAGENET,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn summary(&self) -> ModelSummary {
        let c = self.net.config();
        ModelSummary {
            growth_rate: c.growth_rate,
            compression: c.compression,
            classes: c.num_classes,
            input_size: [c.input.height, c.input.width],
            params: self.net.count_params().total_params,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.config.lambda = lambda;
        self.config.validate()?;
        Ok(self)
    }

    pub fn get_medicine(&self, id: &str) -> Result<&MedicineRecord> {
        self.catalog.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(&self, bytes: &[u8]) -> Result<RgbImage> {
        let format = image::guess_format(bytes)
            .map_err(|_| ServiceError::UnsupportedMedia("body is not a PNG or JPEG image".into()))?;
        if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
            return Err(ServiceError::UnsupportedMedia(format!("{format:?} images are not accepted")));
        }
        let img = image::load_from_memory_with_format(bytes, format).map_err(|e| ServiceError::BadImage(e.to_string()))?;
        Ok(self.bound(img).to_rgb8())
    }

    fn bound(&self, img: DynamicImage) -> DynamicImage {
        let max = self.config.max_frame_dim;
        if img.width() > max || img.height() > max {
            img.resize(max, max, image::imageops::FilterType::Triangle)
        } else {
            img
        }
    }

    /// Full softmax distribution over the model's classes, computed in f64.
    pub fn probabilities(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let input = self.net.config().input;
        let x = preprocess(img, (input.height, input.width), &self.norm)?;
        let shape = [1, 3, input.height, input.width];
        let logits = self.net.forward(&x.reshape(&shape)?)?;
        let logits = logits.data();
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / sum).collect())
    }

    pub fn classify_image(&self, img: &RgbImage) -> Result<ClassificationResult> {
        let start = Instant::now();
        let probs = self.probabilities(img)?;
        let mut order: Vec<usize> = (0..probs.len()).collect();
        // stable sort keeps the lower class index first on ties
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
        let top: Vec<TopEntry> = order
            .iter()
            .take(self.config.top_k)
            .map(|&c| TopEntry {
                class_index: c,
                class_id: self.catalog.for_class(c).id.clone(),
                confidence: probs[c],
            })
            .collect();
        let recognized = top[0].confidence >= self.config.lambda;
        Ok(ClassificationResult {
            status: if recognized { Status::Recognized } else { Status::BelowThreshold },
            medicine: recognized.then(|| self.catalog.for_class(top[0].class_index).into()),
            top,
            suppressed: !recognized,
            lambda: self.config.lambda,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Decode, preprocess, eval-mode forward, softmax, threshold.
    pub fn classify_frame(&self, bytes: &[u8]) -> Result<ClassificationResult> {
        let start = Instant::now();
        let img = self.decode(bytes)?;
        let mut result = self.classify_image(&img)?;
        result.latency_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(result)
    }
}
