//! Kernel two-sample variable selection over time-indexed word embeddings.
//!
//! For every pair of periods the crate learns sparse ARD kernel weights that
//! maximise an MMD test-power surrogate, aggregates the surviving dimensions
//! over a regularisation path with cross-validation, checks them with a
//! permutation test on held-out words, and scores words by how far their
//! vectors move along the selected dimensions.

pub mod analysis;
pub mod config;
pub mod embedding;
pub mod error;
pub mod kernel;
pub mod mmd;
pub mod permutation;
pub mod selection;
pub mod sum;

pub use error::{Error, Result};
