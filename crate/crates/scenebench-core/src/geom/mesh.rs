use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aabb, GeomError, PointCloud, SimilarityTransform, SpaceTag};

/// Indexed triangle mesh. Faces must reference valid, distinct vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, GeomError> {
        for v in &vertices {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(GeomError::InvalidGeometry("non-finite vertex".into()));
            }
        }
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(GeomError::InvalidGeometry(format!(
                    "face {fi} references vertex out of range"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeomError::InvalidGeometry(format!(
                    "face {fi} is degenerate (repeated vertex index)"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn aabb(&self) -> Result<Aabb, GeomError> {
        Aabb::from_points(&self.vertices)
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn triangle_area(&self, face: &[usize; 3]) -> f64 {
        let a = self.vertices[face[0]];
        let b = self.vertices[face[1]];
        let c = self.vertices[face[2]];
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Area-weighted uniform surface sampling; deterministic for a seed.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<PointCloud, GeomError> {
        if self.faces.is_empty() {
            return Err(GeomError::EmptyInput);
        }
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in &self.faces {
            total += self.triangle_area(f);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(GeomError::DegenerateExtent);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let r = rng.random_range(0.0..total);
            let fi = cumulative.partition_point(|&c| c <= r).min(self.faces.len() - 1);
            let f = &self.faces[fi];
            let (a, b, c) = (
                self.vertices[f[0]],
                self.vertices[f[1]],
                self.vertices[f[2]],
            );
            // sqrt trick for uniform barycentric coordinates
            let su: f64 = rng.random_range(0.0..1.0f64).sqrt();
            let v: f64 = rng.random_range(0.0..1.0);
            points.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
        }
        PointCloud::new(points, SpaceTag::Raw)
    }

    /// Axis-aligned unit cube `[0,1]^3` (12 triangles).
    pub fn unit_cube() -> TriangleMesh {
        let vertices: Vec<Vector3<f64>> = (0..8)
            .map(|i| {
                Vector3::new(
                    (i & 1) as f64,
                    ((i >> 1) & 1) as f64,
                    ((i >> 2) & 1) as f64,
                )
            })
            .collect();
        let faces = vec![
            // z = 0 and z = 1
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            // y = 0 and y = 1
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            // x = 0 and x = 1
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        TriangleMesh::new(vertices, faces).expect("static cube is valid")
    }
}
