//! A knowledge-graph attribute network recommender.
//!
//! Entities carry one embedding per relation. Item representations are
//! built by pooling neighbors relation by relation and concatenating the
//! pooled blocks, so each relation occupies a fixed range of positions that
//! survives multi-layer propagation. Users receive interest-gated pooled
//! histories on top of a collaborative embedding, and the whole model is
//! trained with a pairwise ranking loss.

pub mod attention;
pub mod checkpoint;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod explain;
pub mod grad;
pub mod kg;
pub mod model;
pub mod propagation;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
