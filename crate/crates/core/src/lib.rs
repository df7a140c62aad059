//! Core algorithms for benchmarking model-extraction attacks.
//!
//! Everything here is `no_std` with `alloc`: response degradation policies,
//! a small dense/convolutional network with manual backpropagation, the
//! optimizers and distillation trainer, query-selection strategies
//! (random, k-center greedy, PGD, Carlini-Wagner), agreement metrics and
//! the max-entropy reconstruction used for longitudinal analysis.
//!
//! IO, metering, networking and the CLI live in the `mexkit` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
mod math;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod retro;
pub mod rng;
pub mod simplex;
pub mod strategies;
pub mod trainer;

pub use error::{Error, Result};
pub use policy::{DegradedResponse, ResponsePolicy};
pub use simplex::ProbabilityVector;
