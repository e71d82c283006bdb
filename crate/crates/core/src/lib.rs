//! Factorization of origin-destination-time mobility tensors.
//!
//! The library builds trip tensors and point-of-interest context from raw
//! records, factorizes them with a regularized nonnegative Tucker model,
//! and provides completion, baseline, multi-year sequence, and analysis
//! utilities on top of the shared solver.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod ingest;
pub mod io;
pub mod model;
pub mod nr;
pub mod sequence;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
