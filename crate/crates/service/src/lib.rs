//! Classification service: a loaded densenet plus a medicine catalog behind
//! a λ confidence threshold, exposed over HTTP.

pub mod bench;
pub mod catalog;
pub mod engine;
pub mod error;
pub mod http;

pub use bench::{benchmark, BenchReport};
pub use catalog::{placeholder_catalog, Catalog, MedicineRecord, MedicineSummary, PilSections};
pub use engine::{ClassificationResult, Engine, EngineConfig, ModelSummary, Status, TopEntry, DEFAULT_LAMBDA, MAX_TOP_K};
pub use error::ServiceError;
pub use http::{router, serve, CatalogEntry, Health};
