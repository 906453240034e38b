//! Kernels for splitting 3D semantic lesion masks into lesion instances and
//! for evaluating instance segmentations with confluence-aware metrics.
//!
//! The crate is `no_std` and only needs an allocator. Everything here is a
//! pure function over in-memory grids; file formats, statistics and the
//! command line live in the `lesion-kit` companion crate.
//!
//! Module map:
//!
//! - [`volume`]: dense grids with physical spacing, label maps, per-instance geometry
//! - [`morphology`]: connected components, dilation, max-pool NMS, Hessian peak candidates
//! - [`confluence`]: confluent components, CLU and CLU+ sets
//! - [`splitting`]: CC, ACLS and center/offset instance pipelines plus reference targets
//! - [`evaluation`]: mutual IoU matching, PQ/SQ/RQ, Dice/nDSC, detection and CLU metrics
//! - [`phantom`]: seedable synthetic confluent-lesion cohorts with brute-force ground truth
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod confluence;
pub mod error;
pub mod evaluation;
pub mod morphology;
pub mod phantom;
pub mod splitting;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Connectivity, Dims, Grid, LabelMap, OffsetField, ProbMap, Spacing, Voxel};
