//! Command-line front end: argument parsing, scenario pipelines and run manifests.

pub mod config;
pub mod run;

pub use config::{parse_args, render, ArgsError, RunConfig, Scenario};
pub use run::{run, RunError, RunManifest, RunReport};
