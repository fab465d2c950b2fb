//! IO, file formats, configuration, and the experiment commands behind the
//! `longtail` binary. All numerics live in `longtail-core`; this crate only
//! moves bytes, parses configs, and writes CSV/TOML outputs.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod formats;
pub mod outputs;

pub use config::{AblateConfig, ExperimentConfig};
