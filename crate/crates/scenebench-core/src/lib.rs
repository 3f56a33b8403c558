//! Geometry toolkit for random 3D scene layout synthesis, multi-stage robust
//! ICP alignment, and scene/object-level evaluation metrics.
//!
//! The crate is organized around independent, pure-function modules:
//!
//! - [`geom`] — point clouds, meshes, AABBs, similarity transforms, voxel
//!   downsampling, normal estimation, exact nearest-neighbor search.
//! - [`io`] — minimal PLY / OBJ readers and writers.
//! - [`layout`] — collision-free random scene layout via variable-radius
//!   Poisson-disk placement, table-top stacking, spatial relation tags.
//! - [`view`] — canonical/view-centric space conversion and point-splat
//!   visibility for occluded-view filtering.
//! - [`registration`] — yaw-sweep initialized, coarse-to-fine robust ICP
//!   with pose validation and dual-normalization branch selection.
//! - [`metrics`] — Chamfer distance, F-score, matched volumetric AABB IoU.
//! - [`sca`] — numeric reference kernel for scene-context attention and the
//!   rectified-flow matching loss.
//! - [`manifest`] / [`eval`] — scene manifests and the batch evaluation
//!   pipeline behind the CLI.

pub mod eval;
pub mod geom;
pub mod io;
pub mod layout;
pub mod manifest;
pub mod metrics;
pub mod registration;
pub mod sca;
pub mod view;

pub use geom::{
    Aabb, GeomError, KdTree3, PointCloud, SimilarityTransform, SpaceTag, TriangleMesh, VoxelGrid,
};
