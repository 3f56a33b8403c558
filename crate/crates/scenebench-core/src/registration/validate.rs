use nalgebra::{Matrix3, Vector3};

use crate::geom::{project_to_so3, SimilarityTransform};

/// Reasons a candidate transform is rejected before being reported.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationFailure {
    NonFinite,
    /// Pre-projection determinant of the rotation block.
    BadDeterminant(f64),
    ExcessiveTranslation(f64),
    BadScale(f64),
}

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationFailure::NonFinite => write!(f, "non-finite transform entry"),
            ValidationFailure::BadDeterminant(d) => {
                write!(f, "rotation determinant {d} too far from +1")
            }
            ValidationFailure::ExcessiveTranslation(n) => {
                write!(f, "translation magnitude {n} exceeds the normalized bound")
            }
            ValidationFailure::BadScale(s) => write!(f, "scale {s} is not a positive finite"),
        }
    }
}

/// Largest `|det - 1|` accepted for a rigid rotation block.
pub const MAX_DET_DEVIATION: f64 = 0.01;
/// Largest translation norm accepted in shared-normalized coordinates.
pub const MAX_TRANSLATION_NORM: f64 = 4.0;

/// Sanity-check raw transform parts and project the rotation block onto
/// SO(3). Reflections are disallowed: the projection always lands on
/// det = +1, and a rigid-mode input whose determinant strays more than
/// [`MAX_DET_DEVIATION`] from +1 is rejected outright.
pub fn validate_transform(
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    scale: f64,
    rigid: bool,
) -> Result<SimilarityTransform, ValidationFailure> {
    let finite = rotation.iter().all(|v| v.is_finite())
        && translation.iter().all(|v| v.is_finite())
        && scale.is_finite();
    if !finite {
        return Err(ValidationFailure::NonFinite);
    }
    if scale <= 0.0 {
        return Err(ValidationFailure::BadScale(scale));
    }
    let det = rotation.determinant();
    if rigid && (det - 1.0).abs() > MAX_DET_DEVIATION {
        return Err(ValidationFailure::BadDeterminant(det));
    }
    let norm = translation.norm();
    if norm > MAX_TRANSLATION_NORM {
        return Err(ValidationFailure::ExcessiveTranslation(norm));
    }
    let projected = project_to_so3(rotation).map_err(|_| ValidationFailure::NonFinite)?;
    Ok(SimilarityTransform::from_parts_unchecked(
        projected,
        *translation,
        scale,
    ))
}

/// Convenience wrapper for an already-assembled transform.
pub fn validate(
    t: &SimilarityTransform,
    rigid: bool,
) -> Result<SimilarityTransform, ValidationFailure> {
    validate_transform(t.rotation(), t.translation(), t.scale(), rigid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_unchanged() {
        let t = validate(&SimilarityTransform::identity(), true).unwrap();
        assert_eq!(t, SimilarityTransform::identity());
    }

    #[test]
    fn reflection_is_rejected_when_rigid() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let err = validate_transform(&m, &Vector3::zeros(), 1.0, true).unwrap_err();
        assert!(matches!(err, ValidationFailure::BadDeterminant(d) if (d + 1.0).abs() < 1e-12));
    }

    #[test]
    fn excessive_translation_is_rejected() {
        let err = validate_transform(
            &Matrix3::identity(),
            &Vector3::new(10.0, 0.0, 0.0),
            1.0,
            true,
        )
        .unwrap_err();
        assert!(matches!(err, ValidationFailure::ExcessiveTranslation(n) if n == 10.0));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut m = Matrix3::identity();
        m[(1, 1)] = f64::NAN;
        assert_eq!(
            validate_transform(&m, &Vector3::zeros(), 1.0, true),
            Err(ValidationFailure::NonFinite)
        );
    }

    #[test]
    fn near_rotation_is_snapped_onto_so3() {
        // 0.5% uniform inflation: inside the determinant tolerance, comes out
        // exactly orthonormal.
        let r0 = SimilarityTransform::from_axis_yaw(1, 0.8);
        let m = 1.002 * r0.rotation();
        let t = validate_transform(&m, &Vector3::zeros(), 1.0, true).unwrap();
        let gram = t.rotation().transpose() * t.rotation();
        assert!((gram - Matrix3::identity()).abs().max() < 1e-9);
        assert!((t.rotation() - r0.rotation()).abs().max() < 1e-9);
    }
}
