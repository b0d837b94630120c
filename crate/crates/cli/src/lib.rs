//! Configuration, stage pipeline and HTTP service behind the `socripple`
//! binary.

pub mod config;
pub mod pipeline;
pub mod service;

pub use config::{ConfigError, RunConfig};
