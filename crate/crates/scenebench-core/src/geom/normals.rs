use nalgebra::{Matrix3, Vector3};

use super::{GeomError, KdTree3, PointCloud};

/// Per-point unit normals from the covariance of each point's `k` nearest
/// neighbors: the eigenvector with the smallest eigenvalue. Normals are
/// flipped to face the coordinate origin of the cloud's current space, which
/// fixes the sign deterministically.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud, GeomError> {
    if cloud.len() < k + 1 {
        return Err(GeomError::InsufficientPoints {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    let tree = KdTree3::from_cloud(cloud);
    let points = cloud.points();
    let normals: Vec<Vector3<f64>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // k nearest excluding the point itself; the query returns the
            // point at distance 0 first (lowest-index ordering keeps it
            // stable even with duplicates).
            let nbrs = tree.k_nearest(p, k + 1);
            let mut neighborhood: Vec<&Vector3<f64>> = nbrs
                .iter()
                .filter(|(j, _)| *j != i)
                .take(k)
                .map(|(j, _)| &points[*j])
                .collect();
            neighborhood.push(p);
            orient_to_origin(smallest_eigenvector(&neighborhood), p)
        })
        .collect();
    PointCloud::with_normals(points.to_vec(), normals, cloud.space())
}

fn smallest_eigenvector(pts: &[&Vector3<f64>]) -> Vector3<f64> {
    let n = pts.len() as f64;
    let mean: Vector3<f64> = pts.iter().fold(Vector3::zeros(), |acc, p| acc + **p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = **p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut arg = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[arg] {
            arg = i;
        }
    }
    let v: Vector3<f64> = eig.eigenvectors.column(arg).into();
    let norm = v.norm();
    if norm > 0.0 {
        v / norm
    } else {
        Vector3::z()
    }
}

#[inline]
fn orient_to_origin(n: Vector3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    if n.dot(&(-p)) < 0.0 {
        -n
    } else {
        n
    }
}
