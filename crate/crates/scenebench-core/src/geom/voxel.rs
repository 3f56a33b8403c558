use std::collections::HashMap;

use nalgebra::Vector3;

use super::{GeomError, PointCloud};

/// Sparse voxel occupancy map with per-voxel point aggregates.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    origin: Vector3<f64>,
    occupied: HashMap<[i64; 3], Aggregate>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Aggregate {
    sum: Vector3<f64>,
    count: usize,
}

impl VoxelGrid {
    pub fn new(voxel_size: f64, origin: Vector3<f64>) -> Result<Self, GeomError> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(GeomError::InvalidGeometry(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        Ok(Self {
            voxel_size,
            origin,
            occupied: HashMap::new(),
        })
    }

    #[inline]
    pub fn index_of(&self, p: &Vector3<f64>) -> [i64; 3] {
        let rel = (p - self.origin) / self.voxel_size;
        [
            rel.x.floor() as i64,
            rel.y.floor() as i64,
            rel.z.floor() as i64,
        ]
    }

    pub fn insert(&mut self, p: &Vector3<f64>) {
        let agg = self.occupied.entry(self.index_of(p)).or_default();
        agg.sum += p;
        agg.count += 1;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    /// Per-voxel centroids in lexicographic voxel-index order, so the output
    /// is independent of hash-map iteration order.
    pub fn centroids(&self) -> Vec<Vector3<f64>> {
        let mut keys: Vec<&[i64; 3]> = self.occupied.keys().collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|k| {
                let agg = &self.occupied[k];
                agg.sum / agg.count as f64
            })
            .collect()
    }
}

/// One centroid per occupied voxel. The grid origin is anchored at the
/// cloud's AABB minimum so indices are reproducible for identical inputs.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud, GeomError> {
    if cloud.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let origin = cloud.aabb()?.min;
    voxel_downsample_with_origin(cloud, voxel_size, origin)
}

pub fn voxel_downsample_with_origin(
    cloud: &PointCloud,
    voxel_size: f64,
    origin: Vector3<f64>,
) -> Result<PointCloud, GeomError> {
    if cloud.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let mut grid = VoxelGrid::new(voxel_size, origin)?;
    for p in cloud.points() {
        grid.insert(p);
    }
    PointCloud::new(grid.centroids(), cloud.space())
}
