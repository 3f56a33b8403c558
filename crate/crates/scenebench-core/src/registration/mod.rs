//! Multi-stage robust ICP: yaw-sweep global initialization, shared-normalized
//! coarse-to-fine refinement, Tukey point-to-plane fine stage, pose projection
//! and validation with fallbacks, and dual-normalization branch selection.

mod chamfer;
mod estimators;
mod validate;
mod yaw_sweep;

pub use chamfer::trimmed_symmetric_chamfer;
pub use estimators::{icp_point_to_plane_tukey, icp_point_to_point, StageResult};
pub use validate::{
    validate, validate_transform, ValidationFailure, MAX_DET_DEVIATION, MAX_TRANSLATION_NORM,
};
pub use yaw_sweep::{yaw_sweep_init, YawSweepReport};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    estimate_normals, shared_normalize, voxel_downsample, GeomError, KdTree3, PointCloud,
    SharedNormalization, SimilarityTransform, SpaceTag,
};
use crate::metrics;

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("operation requires a non-empty input")]
    EmptyInput,
    #[error("no correspondences within threshold")]
    NoOverlap,
    #[error("target cloud has no normals")]
    MissingNormals,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpAxis {
    X,
    Y,
    Z,
}

impl UpAxis {
    pub fn index(self) -> usize {
        match self {
            UpAxis::X => 0,
            UpAxis::Y => 1,
            UpAxis::Z => 2,
        }
    }
}

impl std::str::FromStr for UpAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(UpAxis::X),
            "y" | "Y" => Ok(UpAxis::Y),
            "z" | "Z" => Ok(UpAxis::Z),
            other => Err(format!("unknown axis '{other}', expected x, y, or z")),
        }
    }
}

/// Default voxel size `v` in shared-normalized units.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.03;

/// All registration constants. Distance thresholds derive from the voxel
/// size; [`IcpConfig::with_voxel_size`] keeps them consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub up_axis: UpAxis,
    pub yaw_candidates_deg: Vec<f64>,
    pub trim_ratio: f64,
    pub prescore_sample_cap: usize,
    pub keep_top_yaw: usize,
    pub voxel_size: f64,
    pub estimate_scale: bool,
    pub total_iterations: usize,
    pub tukey_k: f64,
    pub coarse_threshold: f64,
    pub fine_threshold_p2l: f64,
    pub fine_threshold_p2p: f64,
    pub selection_lambda: f64,
    pub seed_icp_iterations: usize,
    pub normal_k: usize,
    pub convergence_eps: f64,
    pub seed: u64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self::with_voxel_size(DEFAULT_VOXEL_SIZE)
    }
}

impl IcpConfig {
    pub fn with_voxel_size(v: f64) -> Self {
        Self {
            up_axis: UpAxis::Y,
            yaw_candidates_deg: (0..8).map(|i| 45.0 * i as f64).collect(),
            trim_ratio: 0.2,
            prescore_sample_cap: 2000,
            keep_top_yaw: 3,
            voxel_size: v,
            estimate_scale: false,
            total_iterations: 60,
            tukey_k: 1.5 * v,
            coarse_threshold: 2.5 * v,
            fine_threshold_p2l: v,
            fine_threshold_p2p: 1.5 * v,
            selection_lambda: v,
            seed_icp_iterations: 15,
            normal_k: 16,
            convergence_eps: 1e-7,
            seed: 0,
        }
    }

    /// Budget split: `T_coarse = max(10, floor(T/2))`, `T_fine = max(10, T - T_coarse)`.
    pub fn iteration_split(total: usize) -> (usize, usize) {
        let coarse = (total / 2).max(10);
        let fine = total.saturating_sub(coarse).max(10);
        (coarse, fine)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageProvenance {
    Fine,
    CoarseFallback,
    IdentityFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationBranch {
    Minmax,
    AabbRecentered,
}

/// Registration output, expressed in the shared-normalized space described
/// by `normalization`.
#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: SimilarityTransform,
    /// Fraction of full-resolution source points matched within the
    /// point-to-point fine threshold by the final transform.
    pub fitness: f64,
    /// Euclidean RMSE over those matches; 0 when nothing matched.
    pub rmse: f64,
    pub provenance: StageProvenance,
    pub normalization: SharedNormalization,
    pub branch: Option<NormalizationBranch>,
    /// Accepted-iteration RMSE trace of the stage that produced the result.
    pub rmse_history: Vec<f64>,
}

impl IcpResult {
    fn identity_fallback(normalization: SharedNormalization) -> Self {
        Self {
            transform: SimilarityTransform::identity(),
            fitness: 0.0,
            rmse: 0.0,
            provenance: StageProvenance::IdentityFallback,
            normalization,
            branch: None,
            rmse_history: Vec::new(),
        }
    }

    /// The same transform expressed in the raw input space.
    pub fn denormalized_transform(&self) -> SimilarityTransform {
        let n = &self.normalization;
        let to_norm = SimilarityTransform::from_parts_unchecked(
            nalgebra::Matrix3::identity(),
            -n.center / n.sigma,
            1.0 / n.sigma,
        );
        let from_norm = SimilarityTransform::from_parts_unchecked(
            nalgebra::Matrix3::identity(),
            n.center,
            n.sigma,
        );
        from_norm.compose(&self.transform).compose(&to_norm)
    }
}

fn evaluate_alignment(
    source: &PointCloud,
    target_tree: &KdTree3,
    transform: &SimilarityTransform,
    threshold: f64,
) -> (f64, f64) {
    let mut matched = 0usize;
    let mut sq_sum = 0.0;
    for p in source.points() {
        let q = transform.apply(p);
        if let Some((_, d)) = target_tree.nearest(&q) {
            if d <= threshold {
                matched += 1;
                sq_sum += d * d;
            }
        }
    }
    let fitness = matched as f64 / source.len() as f64;
    let rmse = if matched == 0 {
        0.0
    } else {
        (sq_sum / matched as f64).sqrt()
    };
    (fitness, rmse)
}

/// Full robust registration pipeline. Never fails: every error path
/// degrades to an identity-fallback result with explicit provenance.
pub fn robust_icp(source: &PointCloud, target: &PointCloud, config: &IcpConfig) -> IcpResult {
    let fallback_norm = SharedNormalization {
        center: Vector3::zeros(),
        sigma: 1.0,
    };
    match robust_icp_inner(source, target, config) {
        Ok(result) => result,
        Err(_) => IcpResult::identity_fallback(fallback_norm),
    }
}

fn robust_icp_inner(
    source: &PointCloud,
    target: &PointCloud,
    config: &IcpConfig,
) -> Result<IcpResult, IcpError> {
    let (source_n, target_n, normalization) = shared_normalize(source, target)?;
    let v = config.voxel_size;
    let source_down = voxel_downsample(&source_n, v)?;
    let target_down = voxel_downsample(&target_n, v)?;

    let (t0, _sweep) = yaw_sweep_init(&source_down, &target_down, config)?;
    let (coarse_budget, fine_budget) = IcpConfig::iteration_split(config.total_iterations);

    let coarse = icp_point_to_point(
        &source_down,
        &target_down,
        &t0,
        coarse_budget,
        config.coarse_threshold,
        config.estimate_scale,
        config.convergence_eps,
    )
    .ok();

    // Fine stage runs point-to-plane on the full-resolution pair when target
    // normals are available, point-to-point at the wider threshold otherwise.
    let target_with_normals = estimate_normals(&target_n, config.normal_k).ok();
    let fine = {
        let coarse_transform = coarse.as_ref().map(|c| c.transform);
        let (fine_source, fine_init, pre) = if config.estimate_scale {
            match coarse_transform {
                // Scale was estimated: bake the coarse similarity into the
                // points and refine rigidly from identity, then compose.
                Some(ct) => (
                    source_n.transformed(&ct),
                    SimilarityTransform::identity(),
                    Some(ct),
                ),
                None => (source_n.clone(), t0, None),
            }
        } else {
            (source_n.clone(), coarse_transform.unwrap_or(t0), None)
        };
        let stage = match &target_with_normals {
            Some(tn) => icp_point_to_plane_tukey(
                &fine_source,
                tn,
                &fine_init,
                fine_budget,
                config.fine_threshold_p2l,
                config.tukey_k,
                config.convergence_eps,
            ),
            None => icp_point_to_point(
                &fine_source,
                &target_n,
                &fine_init,
                fine_budget,
                config.fine_threshold_p2p,
                config.estimate_scale,
                config.convergence_eps,
            ),
        };
        stage.ok().map(|mut s| {
            if let Some(pre) = pre {
                s.transform = s.transform.compose(&pre);
            }
            s
        })
    };

    // Validation chain: fine, then coarse, then identity.
    let rigid = !config.estimate_scale;
    let target_tree = KdTree3::from_cloud(&target_n);
    let mut chosen: Option<(SimilarityTransform, StageProvenance, Vec<f64>)> = None;
    if let Some(f) = &fine {
        if let Ok(t) = validate_transform(
            f.transform.rotation(),
            f.transform.translation(),
            f.transform.scale(),
            rigid,
        ) {
            chosen = Some((t, StageProvenance::Fine, f.rmse_history.clone()));
        }
    }
    if chosen.is_none() {
        if let Some(c) = &coarse {
            if let Ok(t) = validate_transform(
                c.transform.rotation(),
                c.transform.translation(),
                c.transform.scale(),
                rigid,
            ) {
                chosen = Some((t, StageProvenance::CoarseFallback, c.rmse_history.clone()));
            }
        }
    }
    let (transform, provenance, rmse_history) = chosen.unwrap_or((
        SimilarityTransform::identity(),
        StageProvenance::IdentityFallback,
        Vec::new(),
    ));

    let (fitness, rmse) = evaluate_alignment(
        &source_n,
        &target_tree,
        &transform,
        config.fine_threshold_p2p,
    );
    Ok(IcpResult {
        transform,
        fitness,
        rmse,
        provenance,
        normalization,
        branch: None,
        rmse_history,
    })
}

/// Registration run under both normalization conventions plus the branch
/// pre-transforms needed to reproduce the winning space downstream.
#[derive(Debug, Clone)]
pub struct DualAlignment {
    pub result: IcpResult,
    pub pred_pretransform: SimilarityTransform,
    pub gt_pretransform: SimilarityTransform,
    pub fscore_minmax: f64,
    pub fscore_aabb: f64,
}

fn aabb_recenter_transform(cloud: &PointCloud) -> Result<SimilarityTransform, IcpError> {
    let aabb = cloud.aabb()?;
    let extent = aabb.max_extent();
    let scale = if extent > 0.0 { 2.0 / extent } else { 1.0 };
    Ok(SimilarityTransform::from_parts_unchecked(
        nalgebra::Matrix3::identity(),
        -scale * aabb.center(),
        scale,
    ))
}

fn branch_fscore(pred: &PointCloud, gt: &PointCloud, result: &IcpResult, tau: f64) -> f64 {
    let n = &result.normalization;
    let aligned: Vec<Vector3<f64>> = pred
        .points()
        .iter()
        .map(|p| result.transform.apply(&n.apply(p)))
        .collect();
    let gt_n: Vec<Vector3<f64>> = gt.points().iter().map(|p| n.apply(p)).collect();
    let a = PointCloud::from_parts_unchecked(aligned, None, SpaceTag::SharedNormalized);
    let b = PointCloud::from_parts_unchecked(gt_n, None, SpaceTag::SharedNormalized);
    metrics::f_score(&a, &b, tau).unwrap_or(0.0)
}

/// Run [`robust_icp`] in (i) the min/max-normalized space implied by the
/// generator's native output range and (ii) an AABB-recentered space where
/// each scene is independently centered and scaled into `[-1, 1]`, then keep
/// the branch with the better scene-level F-score (ties go to min/max).
pub fn dual_normalization_align(
    pred: &PointCloud,
    gt: &PointCloud,
    config: &IcpConfig,
    native_range: (f64, f64),
) -> Result<DualAlignment, IcpError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(IcpError::EmptyInput);
    }
    let (lo, hi) = native_range;
    if hi <= lo || !(lo.is_finite() && hi.is_finite()) {
        return Err(IcpError::InvalidConfig(format!(
            "native range [{lo}, {hi}] is empty"
        )));
    }
    let tau = 0.1;

    // Branch (i): uniform prescale mapping the native range onto [-1, 1].
    let factor = 2.0 / (hi - lo);
    let minmax_pre = SimilarityTransform::from_scale(factor);
    let pred_minmax = pred.transformed(&minmax_pre).retagged(SpaceTag::MinmaxNormalized);
    let gt_minmax = gt.transformed(&minmax_pre).retagged(SpaceTag::MinmaxNormalized);
    let minmax_result = robust_icp(&pred_minmax, &gt_minmax, config);
    let fscore_minmax = branch_fscore(&pred_minmax, &gt_minmax, &minmax_result, tau);

    // Branch (ii): each cloud recentered and scaled into [-1, 1] on its own.
    let pred_pre = aabb_recenter_transform(pred)?;
    let gt_pre = aabb_recenter_transform(gt)?;
    let pred_aabb = pred.transformed(&pred_pre).retagged(SpaceTag::AabbNormalized);
    let gt_aabb = gt.transformed(&gt_pre).retagged(SpaceTag::AabbNormalized);
    let aabb_result = robust_icp(&pred_aabb, &gt_aabb, config);
    let fscore_aabb = branch_fscore(&pred_aabb, &gt_aabb, &aabb_result, tau);

    let pick_aabb = fscore_aabb > fscore_minmax;
    let (mut result, pred_pretransform, gt_pretransform) = if pick_aabb {
        (aabb_result, pred_pre, gt_pre)
    } else {
        (minmax_result, minmax_pre, minmax_pre)
    };
    result.branch = Some(if pick_aabb {
        NormalizationBranch::AabbRecentered
    } else {
        NormalizationBranch::Minmax
    });
    Ok(DualAlignment {
        result,
        pred_pretransform,
        gt_pretransform,
        fscore_minmax,
        fscore_aabb,
    })
}
