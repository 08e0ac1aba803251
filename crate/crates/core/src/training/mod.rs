//! Cross-entropy training with Nesterov SGD, a step learning-rate schedule
//! and the classifier-only fine-tuning policy.

mod config;
mod fit;
mod loss;
mod optim;

pub use config::{FreezePolicy, LrDrop, TrainConfig};
pub use fit::{apply_freeze_policy, fit, write_epoch_log, EpochLog, TensorSet, TrainSet};
pub use loss::{argmax_rows, cross_entropy, softmax};
pub use optim::{sgd_step, OptimizerState, SgdParams};
