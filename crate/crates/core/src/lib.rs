//! Federated beam selection for LEO satellite constellations.
//!
//! The pipeline simulates a multi-plane constellation over a static set of
//! ground terminals, labels every visible link with its SNR-optimal beam,
//! trains beam predictors with one federated client per orbital plane and
//! evaluates top-k accuracy and beam-switching behaviour.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod channel;
pub mod checkpoint;
pub mod codebook;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fl;
pub mod nn;
pub mod orbit;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
