//! Medicine-box recognition engine: a from-scratch DenseNet with hand-written
//! backward passes, the fine-tuning loop, the data pipeline and the
//! evaluation/ablation harness.

pub mod data;
pub mod densenet;
pub mod error;
pub mod eval;
pub mod ops;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
