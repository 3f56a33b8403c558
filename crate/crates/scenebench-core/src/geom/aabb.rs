use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeomError;

/// Axis-aligned bounding box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self, GeomError> {
        if !(min.iter().all(|v| v.is_finite()) && max.iter().all(|v| v.is_finite())) {
            return Err(GeomError::InvalidGeometry("non-finite AABB corner".into()));
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(GeomError::InvalidGeometry(
                "AABB min exceeds max componentwise".into(),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn from_points(points: &[Vector3<f64>]) -> Result<Self, GeomError> {
        let mut iter = points.iter();
        let first = iter.next().ok_or(GeomError::EmptyInput)?;
        let mut min = *first;
        let mut max = *first;
        for p in iter {
            min = min.inf(p);
            max = max.sup(p);
        }
        Self::new(min, max)
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    /// Largest side length.
    pub fn max_extent(&self) -> f64 {
        let e = self.extents();
        e.x.max(e.y).max(e.z)
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    /// Volume of the overlap region, 0 when disjoint.
    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        let dx = (self.max.x.min(other.max.x) - self.min.x.max(other.min.x)).max(0.0);
        let dy = (self.max.y.min(other.max.y) - self.min.y.max(other.min.y)).max(0.0);
        let dz = (self.max.z.min(other.max.z) - self.min.z.max(other.min.z)).max(0.0);
        dx * dy * dz
    }
}
