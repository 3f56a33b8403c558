use nalgebra::{Matrix3, Matrix4, Vector3};

use super::GeomError;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rotation + translation + isotropic scale. `x -> scale * R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Validates that `rotation` is a proper rotation and `scale > 0`.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Result<Self, GeomError> {
        if !rotation.iter().all(|v| v.is_finite())
            || !translation.iter().all(|v| v.is_finite())
            || !scale.is_finite()
        {
            return Err(GeomError::InvalidGeometry(
                "non-finite transform entry".into(),
            ));
        }
        if scale <= 0.0 {
            return Err(GeomError::InvalidGeometry(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ORTHONORMAL_TOL {
            return Err(GeomError::InvalidGeometry(format!(
                "rotation is not orthonormal (max deviation {ortho_err:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeomError::InvalidGeometry(format!(
                "rotation determinant {} != +1",
                rotation.determinant()
            )));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    /// Skips the orthonormality check; for internal composition where the
    /// inputs are already validated rotations.
    pub(crate) fn from_parts_unchecked(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Self {
        Self {
            rotation,
            translation,
            scale,
        }
    }

    /// Rotation by `angle` radians about a coordinate axis (0 = x, 1 = y, 2 = z).
    pub fn from_axis_yaw(axis: usize, angle: f64) -> Self {
        let unit = match axis {
            0 => Vector3::x_axis(),
            1 => Vector3::y_axis(),
            _ => Vector3::z_axis(),
        };
        let rot = nalgebra::Rotation3::from_axis_angle(&unit, angle);
        Self {
            rotation: rot.into_inner(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
            scale: 1.0,
        }
    }

    pub fn from_scale(scale: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let rot_t = self.rotation.transpose();
        SimilarityTransform {
            rotation: rot_t,
            translation: -inv_scale * (rot_t * self.translation),
            scale: inv_scale,
        }
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.scale * self.rotation));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of `self.rotation` relative to `other`'s, in radians.
    pub fn rotation_angle_to(&self, other: &SimilarityTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Nearest proper rotation to `m`: `U V^T` from the SVD `M = U Σ V^T`, with
/// the last column of `U` sign-flipped when the determinant comes out
/// negative, so the result always has det = +1.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Matrix3<f64>, GeomError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(GeomError::InvalidGeometry(
            "non-finite matrix entry".into(),
        ));
    }
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        GeomError::InvalidGeometry("SVD failed to produce U".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        GeomError::InvalidGeometry("SVD failed to produce V^T".into())
    })?;
    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        let mut col = u.column_mut(2);
        col.neg_mut();
    }
    Ok(u * v_t)
}
