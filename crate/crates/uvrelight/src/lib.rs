//! Files, configuration, the synthetic oracle and the command line around
//! `uvrelight-core`.

pub mod cli;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
pub use uvrelight_core as core;
