//! Pose from 3D-to-2D correspondences: EPnP, reprojection refinement and RANSAC.

mod epnp;
mod ransac;
mod refine;

pub use epnp::{epnp, PLANAR_RATIO};
pub use ransac::{ransac_pnp, PnpSolution, RansacParams};
pub use refine::{refine_pose, DEFAULT_REFINE_ITERATIONS};
