//! Canonical <-> view-centric space conversion and point-splat visibility.
//!
//! Camera convention: right-handed, -z forward, +y up in the camera frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointCloud, SpaceTag};

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("space mismatch: expected {expected:?}, got {got:?}")]
    SpaceMismatch { expected: SpaceTag, got: SpaceTag },
    #[error("raster resolution {0} is below the minimum of 16")]
    RasterTooSmall(usize),
}

/// Camera placement given as position + look-at + up hint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub up_hint: Vector3<f64>,
}

impl CameraPose {
    pub fn new(
        position: Vector3<f64>,
        look_at: Vector3<f64>,
        up_hint: Vector3<f64>,
    ) -> Result<Self, ViewError> {
        let cam = Self {
            position,
            look_at,
            up_hint,
        };
        cam.basis()?;
        Ok(cam)
    }

    /// World-to-camera rotation: rows are (right, up, -forward).
    pub fn basis(&self) -> Result<Matrix3<f64>, ViewError> {
        let all_finite = self
            .position
            .iter()
            .chain(self.look_at.iter())
            .chain(self.up_hint.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(ViewError::InvalidCamera("non-finite camera field".into()));
        }
        let gaze = self.look_at - self.position;
        if gaze.norm() == 0.0 {
            return Err(ViewError::InvalidCamera(
                "position and look_at coincide".into(),
            ));
        }
        let forward = gaze.normalize();
        let right = forward.cross(&self.up_hint);
        if right.norm() < 1e-12 {
            return Err(ViewError::InvalidCamera(
                "up hint is parallel to the view direction".into(),
            ));
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        Ok(Matrix3::from_rows(&[
            right.transpose(),
            up.transpose(),
            (-forward).transpose(),
        ]))
    }

    #[inline]
    pub fn world_to_camera(&self, basis: &Matrix3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
        basis * (p - self.position)
    }
}

/// Express a cloud in the camera frame (camera at origin, -z forward).
pub fn to_view_centric(cloud: &PointCloud, camera: &CameraPose) -> Result<PointCloud, ViewError> {
    let basis = camera.basis()?;
    let points = cloud
        .points()
        .iter()
        .map(|p| camera.world_to_camera(&basis, p))
        .collect();
    let normals = cloud.normals().map(|ns| ns.iter().map(|n| basis * n).collect());
    Ok(PointCloud::from_parts_unchecked(
        points,
        normals,
        SpaceTag::ViewCentric,
    ))
}

/// Exact inverse of [`to_view_centric`]; requires a view-centric input.
pub fn to_canonical(cloud: &PointCloud, camera: &CameraPose) -> Result<PointCloud, ViewError> {
    if cloud.space() != SpaceTag::ViewCentric {
        return Err(ViewError::SpaceMismatch {
            expected: SpaceTag::ViewCentric,
            got: cloud.space(),
        });
    }
    let basis = camera.basis()?;
    let inv = basis.transpose();
    let points = cloud
        .points()
        .iter()
        .map(|p| inv * p + camera.position)
        .collect();
    let normals = cloud.normals().map(|ns| ns.iter().map(|n| inv * n).collect());
    Ok(PointCloud::from_parts_unchecked(
        points,
        normals,
        SpaceTag::Canonical,
    ))
}

/// Point-splat visibility settings. Splats are a single pixel.
#[derive(Debug, Clone, Copy)]
pub struct VisibilityConfig {
    pub raster: usize,
    /// Vertical field of view, degrees. Aspect is 1 (square raster).
    pub fov_y_deg: f64,
    /// A view is discarded when any instance's fraction is <= this value.
    pub discard_threshold: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            raster: 512,
            fov_y_deg: 60.0,
            discard_threshold: 0.0,
        }
    }
}

const DEPTH_EPS: f64 = 1e-9;
const Z_NEAR: f64 = 1e-9;

/// Fraction of `instance`'s points visible from `camera` given the other
/// instances in `scene` as occluders.
///
/// A point is visible when it projects inside the frustum and no point of a
/// *different* instance wins its pixel at strictly smaller depth;
/// self-occlusion never reduces the fraction. Points behind the camera or
/// outside the raster never count as visible, so a fully out-of-view
/// instance yields 0 rather than an error.
pub fn visibility_fraction(
    instance: &PointCloud,
    scene: &[&PointCloud],
    camera: &CameraPose,
    config: &VisibilityConfig,
) -> Result<f64, ViewError> {
    if config.raster < 16 {
        return Err(ViewError::RasterTooSmall(config.raster));
    }
    if instance.is_empty() {
        return Ok(0.0);
    }
    let basis = camera.basis()?;
    let raster = config.raster;
    let tan_half = (config.fov_y_deg.to_radians() * 0.5).tan();

    // Which entry in `scene` is the instance itself (by pointer); if absent
    // it still participates via a sentinel id.
    let instance_id = scene
        .iter()
        .position(|c| std::ptr::eq(*c, instance))
        .unwrap_or(scene.len());

    let project = |p: &Vector3<f64>| -> Option<(usize, usize, f64)> {
        let q = camera.world_to_camera(&basis, p);
        let depth = -q.z;
        if depth <= Z_NEAR {
            return None;
        }
        let u = q.x / (depth * tan_half);
        let v = q.y / (depth * tan_half);
        if !(-1.0..1.0).contains(&u) || !(-1.0..1.0).contains(&v) {
            return None;
        }
        let px = ((u + 1.0) * 0.5 * raster as f64) as usize;
        let py = ((v + 1.0) * 0.5 * raster as f64) as usize;
        Some((px.min(raster - 1), py.min(raster - 1), depth))
    };

    // Per pixel: nearest depth with its owner, plus the nearest depth among
    // instances other than that owner. Two layers are enough to answer
    // "is anything from another instance in front of this point".
    #[derive(Clone, Copy)]
    struct Pixel {
        best: f64,
        best_owner: usize,
        second_other: f64,
    }
    let mut buf = vec![
        Pixel {
            best: f64::INFINITY,
            best_owner: usize::MAX,
            second_other: f64::INFINITY,
        };
        raster * raster
    ];

    let mut splat = |owner: usize, cloud: &PointCloud| {
        for p in cloud.points() {
            if let Some((px, py, depth)) = project(p) {
                let pixel = &mut buf[py * raster + px];
                if depth < pixel.best {
                    if pixel.best_owner != owner && pixel.best_owner != usize::MAX {
                        pixel.second_other = pixel.best;
                    }
                    pixel.best = depth;
                    pixel.best_owner = owner;
                } else if owner != pixel.best_owner && depth < pixel.second_other {
                    pixel.second_other = depth;
                }
            }
        }
    };

    for (id, cloud) in scene.iter().enumerate() {
        splat(id, cloud);
    }
    if instance_id == scene.len() {
        splat(instance_id, instance);
    }

    let mut visible = 0usize;
    for p in instance.points() {
        if let Some((px, py, depth)) = project(p) {
            let pixel = &buf[py * raster + px];
            let other_min = if pixel.best_owner == instance_id {
                pixel.second_other
            } else {
                pixel.best
            };
            if other_min >= depth - DEPTH_EPS {
                visible += 1;
            }
        }
    }
    Ok(visible as f64 / instance.len() as f64)
}

/// Apply the occluded-view discard rule: keep a camera only when every
/// instance's visibility fraction exceeds the configured threshold.
pub fn retain_visible_views(
    instances: &[PointCloud],
    cameras: &[CameraPose],
    config: &VisibilityConfig,
) -> Result<Vec<(usize, Vec<f64>)>, ViewError> {
    let refs: Vec<&PointCloud> = instances.iter().collect();
    let mut kept = Vec::new();
    for (ci, cam) in cameras.iter().enumerate() {
        let mut fractions = Vec::with_capacity(instances.len());
        for inst in &refs {
            fractions.push(visibility_fraction(inst, &refs, cam, config)?);
        }
        if fractions.iter().all(|&f| f > config.discard_threshold) {
            kept.push((ci, fractions));
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Vector3<f64>>) -> PointCloud {
        PointCloud::new(points, SpaceTag::Raw).unwrap()
    }

    fn grid_cloud(
        center: Vector3<f64>,
        half_x: f64,
        half_y: f64,
        nx: usize,
        ny: usize,
    ) -> PointCloud {
        let mut pts = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                let fx = if nx > 1 { i as f64 / (nx - 1) as f64 } else { 0.5 };
                let fy = if ny > 1 { j as f64 / (ny - 1) as f64 } else { 0.5 };
                pts.push(Vector3::new(
                    center.x - half_x + 2.0 * half_x * fx,
                    center.y - half_y + 2.0 * half_y * fy,
                    center.z,
                ));
            }
        }
        cloud(pts)
    }

    #[test]
    fn axis_aligned_camera_at_origin_is_identity() {
        let cam = CameraPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
        )
        .unwrap();
        let c = cloud(vec![Vector3::new(0.3, -0.7, -2.0)]);
        let vc = to_view_centric(&c, &cam).unwrap();
        assert_eq!(vc.points(), c.points());
        assert_eq!(vc.space(), SpaceTag::ViewCentric);
    }

    #[test]
    fn translated_camera_subtracts_position() {
        let t = Vector3::new(1.0, 2.0, 3.0);
        let cam = CameraPose::new(t, t + Vector3::new(0.0, 0.0, -1.0), Vector3::y()).unwrap();
        let p = Vector3::new(0.5, 0.5, 0.5);
        let vc = to_view_centric(&cloud(vec![p]), &cam).unwrap();
        assert_relative_eq!(vc.points()[0], p - t, epsilon = 1e-15);
    }

    #[test]
    fn rotated_camera_matches_matrix_oracle() {
        // Camera rotated 90 degrees about y: looking down -x... construct
        // explicitly: camera at origin looking toward +x.
        let cam = CameraPose::new(Vector3::zeros(), Vector3::x(), Vector3::y()).unwrap();
        // Hand-built world-to-camera matrix: forward = +x, so camera -z = +x,
        // right = forward x up = (0,0,-1)... rows: right, up, -forward.
        let oracle = Matrix3::from_rows(&[
            Vector3::new(0.0, 0.0, -1.0).transpose(),
            Vector3::new(0.0, 1.0, 0.0).transpose(),
            Vector3::new(-1.0, 0.0, 0.0).transpose(),
        ]);
        let p = Vector3::new(1.0, 0.0, 0.0);
        let vc = to_view_centric(&cloud(vec![p]), &cam).unwrap();
        assert_relative_eq!(vc.points()[0], oracle * p, epsilon = 1e-12);
        // Point straight ahead lands on the -z axis.
        assert_relative_eq!(vc.points()[0], Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
    }

    #[test]
    fn round_trip_is_identity_and_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let cam = CameraPose::new(
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
                Vector3::y(),
            );
            let cam = match cam {
                Ok(c) => c,
                Err(_) => continue,
            };
            let pts: Vec<Vector3<f64>> = (0..50)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                    )
                })
                .collect();
            let c = cloud(pts.clone());
            let vc = to_view_centric(&c, &cam).unwrap();
            let back = to_canonical(&vc, &cam).unwrap();
            for (orig, rec) in pts.iter().zip(back.points()) {
                assert!((orig - rec).norm() < 1e-9);
            }
            //

            // Rigid: pairwise distances preserved.
            for i in 0..5 {
                for j in (i + 1)..5 {
                    let before = (pts[i] - pts[j]).norm();
                    let after = (vc.points()[i] - vc.points()[j]).norm();
                    assert!((before - after).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn view_centric_origin_maps_to_camera_position() {
        let cam = CameraPose::new(
            Vector3::new(2.0, -1.0, 4.0),
            Vector3::zeros(),
            Vector3::y(),
        )
        .unwrap();
        let vc = PointCloud::new(vec![Vector3::zeros()], SpaceTag::Raw)
            .unwrap()
            .retagged(SpaceTag::ViewCentric);
        let back = to_canonical(&vc, &cam).unwrap();
        assert_relative_eq!(back.points()[0], cam.position, epsilon = 1e-12);
    }

    #[test]
    fn to_canonical_rejects_wrong_tag() {
        let cam =
            CameraPose::new(Vector3::zeros(), Vector3::x(), Vector3::y()).unwrap();
        let c = cloud(vec![Vector3::zeros()]);
        assert!(matches!(
            to_canonical(&c, &cam),
            Err(ViewError::SpaceMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_camera_is_rejected() {
        assert!(CameraPose::new(Vector3::zeros(), Vector3::zeros(), Vector3::y()).is_err());
        // Up hint parallel to gaze.
        assert!(CameraPose::new(Vector3::zeros(), Vector3::y(), Vector3::y()).is_err());
    }

    #[test]
    fn unobstructed_instance_is_fully_visible() {
        let cam = CameraPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
        )
        .unwrap();
        let target = grid_cloud(Vector3::new(0.0, 0.0, -2.0), 0.5, 0.5, 40, 40);
        let scene = [&target];
        let f = visibility_fraction(&target, &scene, &cam, &VisibilityConfig::default()).unwrap();
        assert_eq!(f, 1.0);
    }

    #[test]
    fn fully_enclosed_instance_is_invisible() {
        let cam = CameraPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
        )
        .unwrap();
        let target = grid_cloud(Vector3::new(0.0, 0.0, -2.0), 0.3, 0.3, 30, 30);
        // Large dense occluder plane in front of the target.
        let occluder = grid_cloud(Vector3::new(0.0, 0.0, -1.0), 0.8, 0.8, 800, 800);
        let scene = [&occluder, &target];
        let f = visibility_fraction(&target, &scene, &cam, &VisibilityConfig::default()).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn instance_behind_camera_returns_zero() {
        let cam = CameraPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
        )
        .unwrap();
        let behind = grid_cloud(Vector3::new(0.0, 0.0, 3.0), 0.5, 0.5, 10, 10);
        let scene = [&behind];
        let f = visibility_fraction(&behind, &scene, &cam, &VisibilityConfig::default()).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn half_occluded_fraction_matches_projected_area() {
        let cam = CameraPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
        )
        .unwrap();
        // Target face at depth 2, x in [-0.5, 0.5]. Occluder at depth 1 with
        // x in [-0.25, 0], which subtends exactly the left half of the
        // target (equal x/z angular extents).
        let target = grid_cloud(Vector3::new(0.0, 0.0, -2.0), 0.5, 0.5, 120, 120);
        let occ_pts = {
            let mut pts = Vec::new();
            let (nx, ny) = (400, 800);
            for i in 0..nx {
                for j in 0..ny {
                    pts.push(Vector3::new(
                        -0.25 + 0.25 * i as f64 / (nx - 1) as f64,
                        -0.26 + 0.52 * j as f64 / (ny - 1) as f64,
                        -1.0,
                    ));
                }
            }
            cloud(pts)
        };
        let scene = [&occ_pts, &target];
        let f = visibility_fraction(&target, &scene, &cam, &VisibilityConfig::default()).unwrap();
        assert!((f - 0.5).abs() <= 0.1, "fraction {f}");
    }

    #[test]
    fn fraction_monotone_in_occluder_size() {
        let cam = CameraPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
        )
        .unwrap();
        let target = grid_cloud(Vector3::new(0.0, 0.0, -2.0), 0.5, 0.5, 80, 80);
        let mut last = f64::INFINITY;
        for k in 0..6 {
            let half = 0.05 + 0.1 * k as f64;
            // grid pitch must stay below the pixel pitch (~886*half points
            // per side at raster 512) or growth opens pinholes
            let n = (1100.0 * half).ceil() as usize + 2;
            let occluder = grid_cloud(Vector3::new(0.0, 0.0, -1.0), half, half, n, n);
            let scene = [&occluder, &target];
            let f =
                visibility_fraction(&target, &scene, &cam, &VisibilityConfig::default()).unwrap();
            assert!(f <= last + 1e-12, "fraction grew: {f} > {last}");
            last = f;
        }
    }

    #[test]
    fn raster_below_minimum_is_error() {
        let cam =
            CameraPose::new(Vector3::zeros(), Vector3::x(), Vector3::y()).unwrap();
        let c = cloud(vec![Vector3::x()]);
        let cfg = VisibilityConfig {
            raster: 8,
            ..Default::default()
        };
        assert!(matches!(
            visibility_fraction(&c, &[&c], &cam, &cfg),
            Err(ViewError::RasterTooSmall(8))
        ));
    }

    #[test]
    fn retain_views_discards_fully_occluded() {
        let target = grid_cloud(Vector3::new(0.0, 0.0, -2.0), 0.3, 0.3, 30, 30);
        let occluder = grid_cloud(Vector3::new(0.0, 0.0, -1.0), 1.0, 1.0, 900, 900);
        let instances = vec![occluder, target];
        let front = CameraPose::new(
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
        )
        .unwrap();
        // From behind, the former occluder is itself occluded only partially
        // (it is bigger), so the view from the back survives.
        let back = CameraPose::new(
            Vector3::new(0.0, 0.0, -4.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::y(),
        )
        .unwrap();
        let kept =
            retain_visible_views(&instances, &[front, back], &VisibilityConfig::default())
                .unwrap();
        let kept_ids: Vec<usize> = kept.iter().map(|(i, _)| *i).collect();
        assert_eq!(kept_ids, vec![1]);
    }
}
