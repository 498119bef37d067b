//! Data handling, configuration, model files and the experiment pipeline
//! around `bsgp-core`.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::{ModelKind, RunConfig};
pub use error::{HarnessError, Result};
