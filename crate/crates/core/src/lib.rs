//! Graph-based semantic exploration for scenario-style object navigation.
//!
//! The crate bundles a procedural house generator, an episode runtime, the
//! agent (dynamic semantic graph, graph convolution, candidate-conditioned
//! policy with a polar localization head), its training losses, and the
//! navigation metrics used to evaluate it.

pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod learning;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod policy;
pub mod vocab;
pub mod worldgen;

pub use error::{Error, Result};
