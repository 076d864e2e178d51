//! Experiment runner, data ingestion and command-line front end for the
//! `icgps-core` newsvendor library.

pub use icgps_core as core;

pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod plot;
pub mod store;

pub use error::{LabError, Result};
