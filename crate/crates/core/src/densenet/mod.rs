//! Configurable densenet: dense blocks joined by compressing transition
//! layers, a stem, and a linear classifier over globally pooled features.

mod config;
mod io;
mod network;
mod params;

pub use config::{
    compressed_channels, CompressionScope, InputShape, ModelConfig, StemKind, DENSENET121_BLOCKS,
    REFERENCE_COMPRESSION,
};
pub use io::{ModelHeader, TensorEntry, FORMAT_VERSION, MAGIC};
pub use network::{BlockInfo, Network, Tape, TransitionInfo};
pub use params::{Gradients, NamedStats, ParamId, ParamReport, ParamStore, Parameter};
