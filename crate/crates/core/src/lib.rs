//! Latency-based IP geolocation.
//!
//! The pipeline places landmarks on a network graph, fits a per-landmark
//! logarithmic latency→distance curve from inter-landmark probes, turns
//! target probes into circles on the sphere, intersects them pairwise and
//! collapses the resulting point cloud into one estimate. A seeded delay
//! simulator provides ground truth for evaluation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimation;
pub mod experiment;
pub mod export;
pub mod geodesy;
pub mod latency;
pub mod lateration;
pub mod placement;
pub mod simulator;
pub mod topology;

pub use error::{Error, Result};
pub use geodesy::{GeoCircle, GeoPoint};
pub use latency::{LatencyModel, Measurement};
pub use placement::{Landmark, LandmarkSet};
pub use topology::Topology;
