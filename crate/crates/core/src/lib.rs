//! Core of a segmentation-driven 6D object pose pipeline.
//!
//! An image is covered by an `S×S` grid. Every foreground cell predicts a
//! class label and, for each of the object's 3D keypoints, an offset to the
//! keypoint's 2D projection plus a confidence. This crate implements the
//! pieces around such predictions:
//!
//! - [`geometry`]: pinhole camera, rigid poses, object models, and the ADD,
//!   ADD-S and REP accuracy metrics.
//! - [`grid`]: cell geometry, offset encoding, and depth-aware ground-truth
//!   rasterization.
//! - [`losses`]: focal segmentation loss with median-frequency class weights,
//!   the L1 keypoint and confidence regression losses, and a finite-difference
//!   gradient checker.
//! - [`fusion`]: instance clustering and the correspondence selection
//!   strategies (no fusion, highest confidence, best-n, oracle).
//! - [`pnp`]: EPnP, Gauss-Newton refinement and a seeded RANSAC wrapper.
//! - [`simulator`]: seeded synthetic scenes and noisy predictions standing in
//!   for a trained network.
//! - [`evaluation`]: per-instance scoring, detection matching and accuracy
//!   tables.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod pnp;
pub mod scene;
pub mod simulator;

pub use error::{Error, Result};
