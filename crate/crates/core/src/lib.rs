//! Non-neural core of temporal-overlap self-supervised pre-training for
//! LiDAR moving object segmentation.
//!
//! The crate covers the offline pre-processing that turns a LiDAR sequence
//! into temporal overlapping points with free / occupied / unknown labels,
//! the reconstruction samples for the current scan, reference losses,
//! automatic motion labeling from tracked boxes, debiased MOS metrics, and a
//! synthetic spinning-LiDAR simulator used as a geometric oracle.
//!
//! All geometry is done in the sensor frame of the current scan: the current
//! sensor sits at the origin and adjacent scans are rigidly transformed into
//! that frame before extraction.
//!
//! Parallel loops use rayon when the `parallel` feature is enabled (the
//! default) and fall back to plain iterators otherwise. Every parallel stage
//! merges its results deterministically, so outputs never depend on the
//! number of worker threads.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod geometry;
pub mod io;
pub mod model;
pub mod mos;
pub mod objectives;
pub mod overlap;
pub mod par;
pub mod recon;
pub mod sim;

pub use model::{Beam, OccupancyState, Pose, Scan, SensorConfig};
pub use overlap::{ExtractionConfig, OverlapPoint, OverlapSet};
pub use par::Execution;

pub type Vec3 = nalgebra::Vector3<f64>;
