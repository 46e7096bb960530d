//! Config-driven experiment orchestration on top of `lmc-core`: TOML
//! experiment definitions, a hashed results manifest, and SVG/markdown
//! reporting rendered from result CSVs.

pub mod config;
pub mod manifest;
pub mod prepare;
pub mod report;
pub mod run;
pub mod svg;

pub use config::{ConfigError, ExperimentConfig};
pub use manifest::{ResultsIndex, Store};
pub use report::cmd_report;
pub use run::{cmd_ensemble, cmd_interpolate, cmd_sweep, cmd_train, cmd_verify, RunOptions};
