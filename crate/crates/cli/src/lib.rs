//! Config parsing, job dispatch and artifact writing for the `rbb` binary.

pub mod config;
pub mod output;
pub mod presets;
pub mod run;
pub mod verify;

pub use config::{parse_config, parse_config_with_defaults, render, ConfigError, Job, Parsed, RunConfig};
pub use run::{run, run_verify, RunError, RunReport};
