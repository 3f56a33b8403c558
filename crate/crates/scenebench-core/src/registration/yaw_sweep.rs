use super::chamfer::trimmed_symmetric_chamfer;
use super::estimators::icp_point_to_point;
use super::{IcpConfig, IcpError};
use crate::geom::{PointCloud, SimilarityTransform};

/// Diagnostics from the global initialization sweep.
#[derive(Debug, Clone)]
pub struct YawSweepReport {
    /// `(yaw degrees, trimmed chamfer pre-score)` for every candidate.
    pub prescores: Vec<(f64, f64)>,
    /// Number of seed ICP runs actually executed.
    pub seed_runs: usize,
    pub selected_yaw_deg: f64,
    /// True when every seed ICP failed and the best pre-score rotation was
    /// returned with identity translation.
    pub prescore_fallback: bool,
}

/// Yaw-sweep global initialization: pre-score every yaw candidate with the
/// trimmed symmetric Chamfer distance, run a short seed ICP on the best
/// `keep_top_yaw` candidates, and return the seed result minimizing
/// `rmse + lambda * (1 - fitness)`.
///
/// Candidate rotations are anchored at the source centroid with the source
/// centroid carried onto the target centroid, so a relative translation
/// between the clouds cannot wash out the pre-score ranking.
///
/// Inputs are expected to be shared-normalized and voxel-downsampled.
pub fn yaw_sweep_init(
    source: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<(SimilarityTransform, YawSweepReport), IcpError> {
    if source.is_empty() || target.is_empty() {
        return Err(IcpError::EmptyInput);
    }
    if config.keep_top_yaw == 0 || config.keep_top_yaw > config.yaw_candidates_deg.len() {
        return Err(IcpError::InvalidConfig(format!(
            "keep_top_yaw {} out of range for {} candidates",
            config.keep_top_yaw,
            config.yaw_candidates_deg.len()
        )));
    }
    let axis = config.up_axis.index();
    let centroid = |cloud: &PointCloud| {
        cloud.points().iter().sum::<nalgebra::Vector3<f64>>() / cloud.len() as f64
    };
    let mu_source = centroid(source);
    let mu_target = centroid(target);
    // x -> R (x - mu_s) + mu_t
    let candidate_transform = |deg: f64| {
        let rot = SimilarityTransform::from_axis_yaw(axis, deg.to_radians());
        SimilarityTransform::from_parts_unchecked(
            *rot.rotation(),
            mu_target - rot.rotation() * mu_source,
            1.0,
        )
    };

    let mut prescores = Vec::with_capacity(config.yaw_candidates_deg.len());
    for &deg in &config.yaw_candidates_deg {
        let rotated = source.transformed(&candidate_transform(deg));
        let score = trimmed_symmetric_chamfer(
            &rotated,
            target,
            config.trim_ratio,
            config.prescore_sample_cap,
            config.seed,
        )?;
        prescores.push((deg, score));
    }

    let mut ranked: Vec<usize> = (0..prescores.len()).collect();
    ranked.sort_by(|&a, &b| {
        prescores[a]
            .1
            .partial_cmp(&prescores[b].1)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut seed_runs = 0usize;
    let mut best: Option<(f64, f64, SimilarityTransform)> = None; // (objective, yaw, T)
    for &idx in ranked.iter().take(config.keep_top_yaw) {
        let deg = prescores[idx].0;
        let init = candidate_transform(deg);
        seed_runs += 1;
        let seeded = icp_point_to_point(
            source,
            target,
            &init,
            config.seed_icp_iterations,
            config.coarse_threshold,
            config.estimate_scale,
            config.convergence_eps,
        );
        if let Ok(result) = seeded {
            let objective = result.rmse + config.selection_lambda * (1.0 - result.fitness);
            let better = best
                .as_ref()
                .is_none_or(|(obj, _, _)| objective < *obj);
            if better {
                best = Some((objective, deg, result.transform));
            }
        }
    }

    match best {
        Some((_, deg, transform)) => Ok((
            transform,
            YawSweepReport {
                prescores,
                seed_runs,
                selected_yaw_deg: deg,
                prescore_fallback: false,
            },
        )),
        None => {
            // Every seed ICP failed: fall back to the best pre-score rotation.
            let deg = prescores[ranked[0]].0;
            Ok((
                candidate_transform(deg),
                YawSweepReport {
                    prescores,
                    seed_runs,
                    selected_yaw_deg: deg,
                    prescore_fallback: true,
                },
            ))
        }
    }
}
