//! Energy-based outcome reward model.
//!
//! A small transformer encoder maps a (question, chain-of-thought) pair to a
//! scalar energy; lower energy means the solution is more likely correct.
//! The model is trained with a pairwise Bradley-Terry objective on binary
//! outcome labels and used to pick the minimum-energy candidate from a pool.

pub mod dataset;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod real;
pub mod rerank;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use real::Real;
