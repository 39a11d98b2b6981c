//! Prior-guided sample partitioning and routing-free residual adapters for
//! long-tail generative training, on a desk-scale flow-matching model.
//!
//! The crate is organised bottom-up:
//!
//! - [`datagen`]: seeded synthetic long-tail corpora and embedding surrogates.
//! - [`partition`]: static sample-to-expert partitions and their conflict scores.
//! - [`model`]: a frozen vector backbone with per-expert residual adapters,
//!   the flow-matching loss and classifier-free guided sampling.
//! - [`training`]: batch assembly with round-robin resampling, the SGD loop,
//!   utilization ledger and gradient-conflict probes.
//! - [`metrics`]: kNN Coverage, (adjusted) image retrieval score and the
//!   Fréchet distance, each with an exhaustive reference path.
//! - [`pipeline`]: experiment configs, end-to-end runs and run comparison.

pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod seed;
pub mod training;

pub use error::{GraspError, Result};
