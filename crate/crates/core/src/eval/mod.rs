//! Metrics, cross-validation and the (k, φ) ablation harness.

mod ablation;
mod cv;
mod metrics;

pub use ablation::{ablate, config_id, AblationResult, AblationRow};
pub use cv::{cross_validate, predict, Aggregate, CvOptions, CvReport, ModelSink, Progress, RepetitionResult};
pub use metrics::{confusion, metrics, ClassMetrics, ConfusionMatrix, MetricsReport};
