//! File formats, checkpoints, run configuration and the `piplab` command-line
//! front end for `pip-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod report;

pub use error::{LabError, Result};
