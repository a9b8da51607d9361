//! Mean curvature flow with surgery for rotationally symmetric 2-convex
//! hypersurfaces, monotone isotopy traces down to canonical models, and
//! cubical-cover codes for the resulting skeletons.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod geometry;
pub mod flow;
pub mod io;
pub mod isotopy;
pub mod scenario;
pub mod skeleton;
pub mod surgery;
