//! Configuration, artifact pipeline and reports behind the `sigred` binary.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod stamp;
pub mod svg;

pub use config::PipelineConfig;
pub use pipeline::Pipeline;
