use nalgebra::Vector3;

use super::{GeomError, PointCloud, SpaceTag};

/// Parameters of a shared normalization: `x' = (x - center) / sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedNormalization {
    pub center: Vector3<f64>,
    pub sigma: f64,
}

impl SharedNormalization {
    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center) / self.sigma
    }

    #[inline]
    pub fn invert(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p * self.sigma + self.center
    }
}

/// Normalize both clouds by the midpoint and maximum side length of their
/// joint AABB. Both outputs are tagged `SharedNormalized`.
pub fn shared_normalize(
    source: &PointCloud,
    target: &PointCloud,
) -> Result<(PointCloud, PointCloud, SharedNormalization), GeomError> {
    if source.is_empty() || target.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let joint = source.aabb()?.union(&target.aabb()?);
    let sigma = joint.max_extent();
    if sigma == 0.0 {
        return Err(GeomError::DegenerateExtent);
    }
    let norm = SharedNormalization {
        center: joint.center(),
        sigma,
    };
    let apply = |cloud: &PointCloud| {
        let points = cloud.points().iter().map(|p| norm.apply(p)).collect();
        PointCloud::from_parts_unchecked(
            points,
            cloud.normals().map(|ns| ns.to_vec()),
            SpaceTag::SharedNormalized,
        )
    };
    Ok((apply(source), apply(target), norm))
}
