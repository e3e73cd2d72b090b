//! Inference-time calibration of bottleneck attention heads in multimodal
//! models, with evaluation metrics and synthetic recorruption scenarios.

pub mod attention;
pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod patp;
pub mod pipeline;
pub mod profile;
pub mod report;
pub mod synth;
pub mod vsmr;

pub use attention::{AttentionMeasure, BottleneckVector, ModalityLayout, Span};
pub use config::{BairConfig, PatpScope};
pub use error::{BairError, Result};
