//! Command-line driver and local HTTP service for the annotation workflow.

pub mod config;
pub mod service;

pub use config::{Config, ConfigError};
