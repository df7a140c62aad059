//! Metered oracle, MLaaS gateway, experiment harness and file formats for
//! model-extraction benchmarks built on `mexkit-core`.

pub mod error;
pub mod gateway;
pub mod harness;
pub mod oracle;
pub mod retro;

pub use error::{MexError, Result};
