//! Part-wise mesh generation with spatial-context retrieval.
//!
//! A point cloud is split into parts ([`segmentation`]), each normalized
//! part is sent to a pluggable mesh generator ([`orchestration`]), and every
//! generated part is put back in place by an AABB-matching affine transform
//! refined with point-to-plane ICP ([`retrieval`]). The same machinery
//! drives incremental edits ([`editing`]); [`metrics`] scores the results.

pub mod editing;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod orchestration;
pub mod retrieval;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};
