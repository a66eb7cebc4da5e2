//! Pipeline configuration, stage drivers, the rating store and the rating
//! service.

pub mod config;
pub mod pipeline;
pub mod service;
pub mod store;

pub use config::{ConfigError, PipelineConfig, CONFIG_ENV};
pub use service::{router, serve, ItemText, ServiceState};
pub use store::{RatingStore, StoreError};
