use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};

use super::IcpError;
use crate::geom::{KdTree3, PointCloud, SimilarityTransform};

/// Output of one ICP stage.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub transform: SimilarityTransform,
    /// Fraction of source points with a correspondence within threshold.
    pub fitness: f64,
    /// Euclidean RMSE over the matched correspondences.
    pub rmse: f64,
    /// RMSE of each accepted (non-worsening) iteration.
    pub rmse_history: Vec<f64>,
}

pub(super) struct Matches {
    pairs: Vec<(usize, usize, f64)>,
    fitness: f64,
    rmse: f64,
}

pub(super) fn match_within(
    transformed: &[Vector3<f64>],
    tree: &KdTree3,
    threshold: f64,
) -> Matches {
    let mut pairs = Vec::with_capacity(transformed.len());
    let mut sq_sum = 0.0;
    for (i, p) in transformed.iter().enumerate() {
        if let Some((j, d)) = tree.nearest(p) {
            if d <= threshold {
                pairs.push((i, j, d));
                sq_sum += d * d;
            }
        }
    }
    let fitness = pairs.len() as f64 / transformed.len() as f64;
    let rmse = if pairs.is_empty() {
        0.0
    } else {
        (sq_sum / pairs.len() as f64).sqrt()
    };
    Matches {
        pairs,
        fitness,
        rmse,
    }
}

/// Closed-form least-squares alignment of corresponded point pairs, with an
/// optional joint isotropic scale. Exactly-coincident pairs short-circuit to
/// the identity so perfect inputs stay bit-exact.
pub(super) fn umeyama_update(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> SimilarityTransform {
    debug_assert_eq!(src.len(), dst.len());
    let n = src.len();
    if n == 0 {
        return SimilarityTransform::identity();
    }
    if src
        .iter()
        .zip(dst)
        .all(|(s, d)| s.x == d.x && s.y == d.y && s.z == d.z)
    {
        return SimilarityTransform::identity();
    }
    let inv_n = 1.0 / n as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() * inv_n;
    if n < 3 {
        // Rotation is under-determined; translate centroids onto each other.
        return SimilarityTransform::from_translation(mu_d - mu_s);
    }

    let mut sigma = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        let dc = d - mu_d;
        sigma += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    sigma *= inv_n;
    var_src *= inv_n;

    let svd = sigma.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return SimilarityTransform::from_translation(mu_d - mu_s),
    };
    let mut s_diag = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s_diag.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = if with_scale && var_src > 0.0 {
        let trace_ds = svd.singular_values.dot(&s_diag);
        (trace_ds / var_src).max(f64::MIN_POSITIVE)
    } else {
        1.0
    };
    let translation = mu_d - scale * (rotation * mu_s);
    SimilarityTransform::from_parts_unchecked(rotation, translation, scale)
}

/// Classic point-to-point ICP: nearest-neighbor correspondences within
/// `threshold`, closed-form update, stop at `max_iter` or when the RMSE
/// improvement drops below `convergence_eps`.
pub fn icp_point_to_point(
    source: &PointCloud,
    target: &PointCloud,
    init: &SimilarityTransform,
    max_iter: usize,
    threshold: f64,
    estimate_scale: bool,
    convergence_eps: f64,
) -> Result<StageResult, IcpError> {
    if source.is_empty() || target.is_empty() {
        return Err(IcpError::EmptyInput);
    }
    if threshold <= 0.0 {
        return Err(IcpError::InvalidConfig(format!(
            "threshold {threshold} must be positive"
        )));
    }
    let tree = KdTree3::from_cloud(target);
    let mut transform = *init;
    let mut history: Vec<f64> = Vec::new();
    let mut prev_rmse = f64::INFINITY;
    let mut prev_state: Option<(SimilarityTransform, f64, f64)> = None;

    for iter in 0..=max_iter {
        let transformed: Vec<Vector3<f64>> =
            source.points().iter().map(|p| transform.apply(p)).collect();
        let m = match_within(&transformed, &tree, threshold);
        if m.pairs.is_empty() {
            if iter == 0 {
                return Err(IcpError::NoOverlap);
            }
            // An update lost all correspondences: keep the previous state.
            let (t, fitness, rmse) = prev_state.unwrap();
            return Ok(StageResult {
                transform: t,
                fitness,
                rmse,
                rmse_history: history,
            });
        }
        if history.last().is_none_or(|&last| m.rmse <= last) {
            history.push(m.rmse);
        }
        let converged = (prev_rmse - m.rmse).abs() < convergence_eps;
        prev_state = Some((transform, m.fitness, m.rmse));
        if iter == max_iter || converged {
            return Ok(StageResult {
                transform,
                fitness: m.fitness,
                rmse: m.rmse,
                rmse_history: history,
            });
        }
        prev_rmse = m.rmse;

        let src_pts: Vec<Vector3<f64>> =
            m.pairs.iter().map(|&(i, _, _)| transformed[i]).collect();
        let dst_pts: Vec<Vector3<f64>> =
            m.pairs.iter().map(|&(_, j, _)| target.points()[j]).collect();
        let delta = umeyama_update(&src_pts, &dst_pts, estimate_scale);
        transform = delta.compose(&transform);
    }
    unreachable!("loop always returns");
}

#[inline]
pub(super) fn tukey_weight(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        let q = 1.0 - (a / k) * (a / k);
        q * q
    } else {
        0.0
    }
}

/// Point-to-plane ICP with a Tukey robust loss on the plane residuals,
/// solved by iteratively reweighted Gauss-Newton on the 6-dof linearization.
/// The target must carry normals. Scale is never re-estimated here; whatever
/// scale `init` carries is preserved.
pub fn icp_point_to_plane_tukey(
    source: &PointCloud,
    target: &PointCloud,
    init: &SimilarityTransform,
    max_iter: usize,
    threshold: f64,
    tukey_k: f64,
    convergence_eps: f64,
) -> Result<StageResult, IcpError> {
    if source.is_empty() || target.is_empty() {
        return Err(IcpError::EmptyInput);
    }
    if threshold <= 0.0 || tukey_k <= 0.0 {
        return Err(IcpError::InvalidConfig(
            "threshold and tukey_k must be positive".into(),
        ));
    }
    let normals = target.normals().ok_or(IcpError::MissingNormals)?;
    let tree = KdTree3::from_cloud(target);
    let mut transform = *init;
    let mut history: Vec<f64> = Vec::new();
    let mut prev_rmse = f64::INFINITY;
    let mut prev_state: Option<(SimilarityTransform, f64, f64)> = None;

    for iter in 0..=max_iter {
        let transformed: Vec<Vector3<f64>> =
            source.points().iter().map(|p| transform.apply(p)).collect();
        let m = match_within(&transformed, &tree, threshold);
        if m.pairs.is_empty() {
            if iter == 0 {
                return Err(IcpError::NoOverlap);
            }
            let (t, fitness, rmse) = prev_state.unwrap();
            return Ok(StageResult {
                transform: t,
                fitness,
                rmse,
                rmse_history: history,
            });
        }
        if history.last().is_none_or(|&last| m.rmse <= last) {
            history.push(m.rmse);
        }
        let converged = (prev_rmse - m.rmse).abs() < convergence_eps;
        prev_state = Some((transform, m.fitness, m.rmse));
        if iter == max_iter || converged {
            return Ok(StageResult {
                transform,
                fitness: m.fitness,
                rmse: m.rmse,
                rmse_history: history,
            });
        }
        prev_rmse = m.rmse;

        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        let mut weight_sum = 0.0;
        for &(i, j, _) in &m.pairs {
            let p = transformed[i];
            let q = target.points()[j];
            let n = normals[j];
            let r = n.dot(&(p - q));
            let w = tukey_weight(r, tukey_k);
            if w == 0.0 {
                continue;
            }
            let jac_rot = p.cross(&n);
            let mut jac = Vector6::zeros();
            jac.fixed_rows_mut::<3>(0).copy_from(&jac_rot);
            jac.fixed_rows_mut::<3>(3).copy_from(&n);
            h += w * jac * jac.transpose();
            g += w * r * jac;
            weight_sum += w;
        }
        if weight_sum == 0.0 {
            break;
        }
        let delta = solve_damped(&h, &(-g));
        let Some(delta) = delta else { break };
        if delta.norm() < 1e-15 {
            break;
        }
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let u = Vector3::new(delta[3], delta[4], delta[5]);
        let rot = Rotation3::new(omega).into_inner();
        let step = SimilarityTransform::from_parts_unchecked(rot, u, 1.0);
        transform = step.compose(&transform);
    }
    let (t, fitness, rmse) = prev_state.expect("at least one evaluation");
    Ok(StageResult {
        transform: t,
        fitness,
        rmse,
        rmse_history: history,
    })
}

/// Cholesky solve with a diagonal Levenberg fallback for rank-deficient
/// normal matrices (planar targets leave in-plane motion unconstrained).
fn solve_damped(h: &Matrix6<f64>, rhs: &Vector6<f64>) -> Option<Vector6<f64>> {
    if let Some(chol) = h.cholesky() {
        return Some(chol.solve(rhs));
    }
    let lambda = 1e-9 * h.diagonal().max().max(1e-12);
    let damped = h + Matrix6::identity() * lambda;
    damped.cholesky().map(|c| c.solve(rhs))
}
