//! Desk-scale simulator of an entangled-photon free-space optical link.
//!
//! A pump beam drives spontaneous parametric down-conversion behind a
//! turbulent phase screen emulated with von-Kármán statistics. The crate
//! models the classical pump arm and the photon-pair coincidence arm on a
//! shared sampled plane, applies partitioning wavefront optimization on a
//! segmented control phase, and converts ideal patterns into photon-counting
//! measurement records. Every pipeline stage is deterministic given its seed.
//!
//! Module map:
//! - [`turbulence`]: phase-screen synthesis, Fried parameter, frozen-flow views
//! - [`field_optics`]: sampled complex fields, lens far-field transform
//! - [`spdc`]: effective pair field and coincidence patterns
//! - [`detection`]: Poisson counting, scan geometry, camera binning
//! - [`shaper`]: partitioning optimization with pluggable feedback
//! - [`metrics`]: target masks, enhancement/efficiency, estimators
//! - [`scenarios`]: seeded end-to-end experiment runners with exports

pub mod detection;
pub mod error;
pub mod fft;
pub mod field_optics;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod scenarios;
pub mod shaper;
pub mod spdc;
pub mod turbulence;

pub use error::{Error, Result};
pub use grid::Grid;
