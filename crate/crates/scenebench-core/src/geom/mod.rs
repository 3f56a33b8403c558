//! Foundational geometric types and numeric primitives.

mod aabb;
mod cloud;
mod kdtree;
mod mesh;
mod normals;
mod normalize;
mod transform;
mod voxel;

pub use aabb::Aabb;
pub use cloud::{PointCloud, SpaceTag};
pub use kdtree::{nearest_neighbors, KdTree3};
pub use mesh::TriangleMesh;
pub use normals::estimate_normals;
pub use normalize::{shared_normalize, SharedNormalization};
pub use transform::{project_to_so3, SimilarityTransform};
pub use voxel::{voxel_downsample, voxel_downsample_with_origin, VoxelGrid};

use thiserror::Error;

/// Errors raised by the geometric primitives.
#[derive(Debug, Error)]
pub enum GeomError {
    #[error("operation requires a non-empty input")]
    EmptyInput,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate extent: all points coincide")]
    DegenerateExtent,
    #[error("space mismatch: expected {expected:?}, got {got:?}")]
    SpaceMismatch { expected: SpaceTag, got: SpaceTag },
}

/// Euclidean distance with a fixed evaluation order, shared by the k-d tree
/// and every metric so accelerated results match brute force bit-for-bit.
#[inline]
pub fn euclid(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    euclid_sq(a, b).sqrt()
}

#[inline]
pub fn euclid_sq(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}
