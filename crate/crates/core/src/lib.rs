//! Training-free test-time adaptation for streaming embedding classifiers.
//!
//! Incoming unit-norm features are scored against class text embeddings,
//! refined by one kNN mean-shift step toward previously seen features, and
//! classified with the zero-shot logits plus the similarity-weighted logits
//! of an entropy-prioritized per-class cache.
//!
//! Modules:
//! - [`math`]: embeddings, zero-shot logits, softmax, entropy.
//! - [`meanshift`]: feature bank, exact kNN, the single-step shift and an
//!   iterative reference mean-shift.
//! - [`cache`]: the entropy cache and cache logits.
//! - [`pipeline`]: per-sample protocol, stream evaluation, sweeps.
//! - [`dataset`], [`synth`], [`report`]: file formats and benchmarks.

pub mod cache;
pub mod dataset;
mod error;
pub mod math;
pub mod meanshift;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
