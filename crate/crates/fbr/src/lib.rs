//! Seed-quality training for weakly supervised segmentation with explicit
//! background modeling: background semantics are discovered by per-image
//! clustering, stored in a FIFO memory bank, and contrasted against uncertain
//! foreground queries, alongside a similarity-graph-driven foreground
//! contrast and an auxiliary background segmentation objective.

pub mod cam;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod nroi;
pub mod par;
pub mod numerics;
pub mod prototypes;
pub mod sampler;
pub mod synthdata;

pub use error::{FbrError, Result};
