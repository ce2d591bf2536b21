//! Factorization of timelapse panorama stacks into a shared log-reflectance
//! image and per-frame bi-color shading, with spline-based congealing
//! alignment, sun-azimuth estimation, a deterministic synthetic street-scene
//! oracle, and the evaluation protocols built on top of them.
//!
//! The building blocks, bottom to top:
//!
//! * [`image`]: equirectangular RGB buffers, gamma and log transfer, rotation.
//! * [`ingest`]: capture manifests, greedy spatial clustering into stacks.
//! * [`warp`]: periodic cubic B-spline warp grids and their gradients.
//! * [`align`]: joint stack alignment by pairwise appearance congealing.
//! * [`intrinsics`]: median-gradient and bi-color factorization of a stack.
//! * [`azimuth`]: binned sun-azimuth distributions and circular statistics.
//! * [`synth`]: seeded synthetic street scenes with exact ground truth.
//! * [`eval`]: scene-consistency and space-time completion protocols.

pub mod error;
pub mod image;

pub mod adam;
pub mod align;
pub mod azimuth;
pub mod eval;
pub mod ingest;
pub mod intrinsics;
pub mod io;
pub mod synth;
pub mod warp;

pub mod guide;

pub use error::{Error, Result};
