//! Files, configuration, the Monte Carlo harness and the enumeration oracle
//! around [`rejsamp_core`].
//!
//! - [`frame`]: delimited-text frames
//! - [`config`]: TOML experiment configurations
//! - [`harness`]: replicate engine and summaries
//! - [`oracle`]: exact enumeration of two-phase SRS with rejection
//! - [`three_phase`]: the three-phase school-performance study

pub mod config;
mod error;
pub mod frame;
pub mod harness;
pub mod oracle;
pub mod three_phase;

pub use error::{Error, Result};
pub use rejsamp_core as core;
