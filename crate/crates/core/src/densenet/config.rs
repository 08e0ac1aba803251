use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which transition layers apply the configured compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CompressionScope {
    /// Every transition keeps `⌊φ·m⌋` channels.
    #[default]
    All,
    /// Only the first transition uses `φ`; later transitions keep `⌊m/2⌋`.
    /// This is how the published growth/compression ablation counts come out.
    FirstTransition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// 7x7/2 convolution, batch norm, ReLU, 3x3/2 max pool (ImageNet layout).
    #[default]
    Standard,
    /// 3x3/1 convolution, batch norm, ReLU, no pooling; for 32–64 px inputs.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Declarative description of a densenet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature maps contributed by each dense layer (k).
    pub growth_rate: usize,
    /// Fraction of channels kept by transition layers (φ).
    pub compression: f64,
    #[serde(default)]
    pub compression_scope: CompressionScope,
    /// Dense layers per block.
    pub block_layout: Vec<usize>,
    pub num_classes: usize,
    /// Channels emitted by the stem convolution.
    pub stem_channels: usize,
    #[serde(default)]
    pub stem: StemKind,
    pub input: InputShape,
    /// The 1x1 bottleneck emits `bottleneck_width * growth_rate` maps.
    pub bottleneck_width: usize,
}

pub const DENSENET121_BLOCKS: [usize; 4] = [6, 12, 24, 16];

/// Compression used by transitions outside [`CompressionScope::FirstTransition`]'s reach.
pub const REFERENCE_COMPRESSION: f64 = 0.5;

impl ModelConfig {
    /// Standard-stem densenet on 3x224x224 inputs with a `2k` channel stem.
    pub fn new(growth_rate: usize, compression: f64, block_layout: Vec<usize>, num_classes: usize) -> Self {
        ModelConfig {
            growth_rate,
            compression,
            compression_scope: CompressionScope::All,
            block_layout,
            num_classes,
            stem_channels: 2 * growth_rate,
            stem: StemKind::Standard,
            input: InputShape {
                channels: 3,
                height: 224,
                width: 224,
            },
            bottleneck_width: 4,
        }
    }

    /// densenet-121 as shipped by torchvision: blocks (6, 12, 24, 16) and a
    /// 64-channel stem regardless of the growth rate.
    pub fn densenet121(growth_rate: usize, compression: f64, num_classes: usize) -> Self {
        ModelConfig {
            stem_channels: 64,
            ..Self::new(growth_rate, compression, DENSENET121_BLOCKS.to_vec(), num_classes)
        }
    }

    /// Reduced-stem variant for small square inputs.
    pub fn desk(growth_rate: usize, compression: f64, block_layout: Vec<usize>, num_classes: usize, size: usize) -> Self {
        ModelConfig {
            stem: StemKind::Reduced,
            input: InputShape {
                channels: 3,
                height: size,
                width: size,
            },
            ..Self::new(growth_rate, compression, block_layout, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.growth_rate == 0 {
            return fail("growth rate must be >= 1".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return fail(format!("compression must lie in (0, 1], got {}", self.compression));
        }
        if self.block_layout.is_empty() || self.block_layout.contains(&0) {
            return fail(format!("every block needs >= 1 layer, got {:?}", self.block_layout));
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.stem_channels == 0 || self.bottleneck_width == 0 {
            return fail("stem channels and bottleneck width must be >= 1".into());
        }
        if self.input.channels == 0 || self.input.height == 0 || self.input.width == 0 {
            return fail(format!("input shape {:?} has a zero extent", self.input));
        }
        Ok(())
    }

    /// Compression applied by the transition after block `index` (0-based).
    pub fn transition_compression(&self, index: usize) -> f64 {
        match (self.compression_scope, index) {
            (CompressionScope::All, _) | (CompressionScope::FirstTransition, 0) => self.compression,
            (CompressionScope::FirstTransition, _) => REFERENCE_COMPRESSION,
        }
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.bottleneck_width * self.growth_rate
    }
}

/// `⌊φ·m⌋`.
pub fn compressed_channels(compression: f64, channels: usize) -> usize {
    (compression * channels as f64).floor() as usize
}
