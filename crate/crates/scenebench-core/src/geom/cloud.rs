use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Aabb, GeomError, SimilarityTransform};

const UNIT_NORMAL_TOL: f64 = 1e-6;

/// Coordinate space a cloud or scene currently lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceTag {
    Raw,
    SharedNormalized,
    MinmaxNormalized,
    AabbNormalized,
    ViewCentric,
    Canonical,
}

/// A set of 3D points, optionally with unit normals, tagged with the space
/// its coordinates are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    space: SpaceTag,
}

impl PointCloud {
    /// Build a cloud without normals. Rejects non-finite coordinates.
    pub fn new(points: Vec<Vector3<f64>>, space: SpaceTag) -> Result<Self, GeomError> {
        for p in &points {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(GeomError::InvalidGeometry(
                    "non-finite point coordinate".into(),
                ));
            }
        }
        Ok(Self {
            points,
            normals: None,
            space,
        })
    }

    /// Build a cloud with per-point unit normals.
    pub fn with_normals(
        points: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        space: SpaceTag,
    ) -> Result<Self, GeomError> {
        if normals.len() != points.len() {
            return Err(GeomError::InvalidGeometry(format!(
                "normal count {} != point count {}",
                normals.len(),
                points.len()
            )));
        }
        for n in &normals {
            if !(n.x.is_finite() && n.y.is_finite() && n.z.is_finite()) {
                return Err(GeomError::InvalidGeometry("non-finite normal".into()));
            }
            if (n.norm() - 1.0).abs() > UNIT_NORMAL_TOL {
                return Err(GeomError::InvalidGeometry(format!(
                    "normal is not unit length (|n| = {})",
                    n.norm()
                )));
            }
        }
        let mut cloud = Self::new(points, space)?;
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn aabb(&self) -> Result<Aabb, GeomError> {
        Aabb::from_points(&self.points)
    }

    /// Same geometry, new space tag. Callers are responsible for the tag
    /// actually matching the coordinates.
    pub fn retagged(mut self, space: SpaceTag) -> Self {
        self.space = space;
        self
    }

    /// Apply a similarity transform to every point (and rotate normals).
    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        let points = self.points.iter().map(|p| t.apply(p)).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| t.rotation() * n).collect());
        Self {
            points,
            normals,
            space: self.space,
        }
    }

    /// Concatenate clouds into one. All inputs must share a space tag;
    /// normals are kept only if every part has them.
    pub fn concat(parts: &[&PointCloud]) -> Result<Self, GeomError> {
        let mut iter = parts.iter();
        let first = iter.next().ok_or(GeomError::EmptyInput)?;
        let space = first.space;
        for part in parts {
            if part.space != space {
                return Err(GeomError::SpaceMismatch {
                    expected: space,
                    got: part.space,
                });
            }
        }
        let points: Vec<_> = parts.iter().flat_map(|c| c.points.iter().copied()).collect();
        let normals = if parts.iter().all(|c| c.normals.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|c| c.normals.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            points,
            normals,
            space,
        })
    }

    pub(crate) fn from_parts_unchecked(
        points: Vec<Vector3<f64>>,
        normals: Option<Vec<Vector3<f64>>>,
        space: SpaceTag,
    ) -> Self {
        Self {
            points,
            normals,
            space,
        }
    }
}
