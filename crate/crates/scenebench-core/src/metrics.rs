//! Scene- and object-level Chamfer distance, F-score, and matched
//! volumetric AABB IoU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, KdTree3, PointCloud, SimilarityTransform, SpaceTag};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("operation requires a non-empty input")]
    EmptyInput,
    #[error("space mismatch: {a:?} vs {b:?}")]
    SpaceMismatch { a: SpaceTag, b: SpaceTag },
    #[error("matching is empty")]
    EmptyMatching,
    #[error("invalid matching: {0}")]
    InvalidMatching(String),
}

/// Chamfer distance convention. The default is the symmetric mean of
/// unsquared nearest-neighbor distances; the squared variant is exposed for
/// comparability with pipelines that report squared distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferConvention {
    #[default]
    MeanDistance,
    MeanSquaredDistance,
}

fn directional_mean(
    from: &PointCloud,
    tree: &KdTree3,
    convention: ChamferConvention,
) -> f64 {
    let mut total = 0.0;
    for p in from.points() {
        let (_, d) = tree.nearest(p).unwrap();
        total += match convention {
            ChamferConvention::MeanDistance => d,
            ChamferConvention::MeanSquaredDistance => d * d,
        };
    }
    total / from.len() as f64
}

fn check_space(a: &PointCloud, b: &PointCloud) -> Result<(), MetricsError> {
    if a.space() != b.space() {
        return Err(MetricsError::SpaceMismatch {
            a: a.space(),
            b: b.space(),
        });
    }
    Ok(())
}

/// `CD = (mean_a d(a, b) + mean_b d(b, a)) / 2`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricsError> {
    chamfer_distance_with(a, b, ChamferConvention::MeanDistance)
}

pub fn chamfer_distance_with(
    a: &PointCloud,
    b: &PointCloud,
    convention: ChamferConvention,
) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    check_space(a, b)?;
    let tree_a = KdTree3::from_cloud(a);
    let tree_b = KdTree3::from_cloud(b);
    Ok((directional_mean(a, &tree_b, convention) + directional_mean(b, &tree_a, convention)) / 2.0)
}

/// F-score at threshold `tau`, in percent: harmonic mean of the fraction of
/// `pred` within `tau` of `gt` (precision) and vice versa (recall).
pub fn f_score(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64, MetricsError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    check_space(pred, gt)?;
    let tree_pred = KdTree3::from_cloud(pred);
    let tree_gt = KdTree3::from_cloud(gt);
    let hits = |cloud: &PointCloud, tree: &KdTree3| {
        cloud
            .points()
            .iter()
            .filter(|p| tree.nearest(p).unwrap().1 <= tau)
            .count() as f64
            / cloud.len() as f64
    };
    let precision = hits(pred, &tree_gt);
    let recall = hits(gt, &tree_pred);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(200.0 * precision * recall / (precision + recall))
}

/// Metrics over the union of all instance points, after applying `transform`
/// to every prediction instance.
pub fn scene_level_metrics(
    pred_instances: &[PointCloud],
    gt_instances: &[PointCloud],
    transform: &SimilarityTransform,
    tau: f64,
) -> Result<(f64, f64), MetricsError> {
    let pred: Vec<PointCloud> = pred_instances
        .iter()
        .map(|c| c.transformed(transform))
        .collect();
    let pred_refs: Vec<&PointCloud> = pred.iter().collect();
    let gt_refs: Vec<&PointCloud> = gt_instances.iter().collect();
    let pred_union =
        PointCloud::concat(&pred_refs).map_err(|_| MetricsError::EmptyInput)?;
    let gt_union = PointCloud::concat(&gt_refs).map_err(|_| MetricsError::EmptyInput)?;
    if pred_union.is_empty() || gt_union.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok((
        chamfer_distance(&pred_union, &gt_union)?,
        f_score(&pred_union, &gt_union, tau)?,
    ))
}

/// Per-instance metrics after the scene-level alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub pred_id: usize,
    pub gt_id: usize,
    pub cd: f64,
    pub fscore: f64,
    /// Volumetric AABB IoU; `None` when the ground-truth box is degenerate.
    pub iou: Option<f64>,
}

/// Per-pair CD and F-score under the single scene-level transform (no
/// per-object realignment), plus their unweighted means.
pub fn object_level_metrics(
    pred_instances: &[PointCloud],
    gt_instances: &[PointCloud],
    matching: &[(usize, usize)],
    transform: &SimilarityTransform,
    tau: f64,
) -> Result<(f64, f64, Vec<InstanceMetrics>), MetricsError> {
    if matching.is_empty() {
        return Err(MetricsError::EmptyMatching);
    }
    let mut per_instance = Vec::with_capacity(matching.len());
    let mut cd_sum = 0.0;
    let mut f_sum = 0.0;
    for &(pi, gi) in matching {
        let pred = pred_instances.get(pi).ok_or_else(|| {
            MetricsError::InvalidMatching(format!("prediction id {pi} out of range"))
        })?;
        let gt = gt_instances.get(gi).ok_or_else(|| {
            MetricsError::InvalidMatching(format!("ground-truth id {gi} out of range"))
        })?;
        let aligned = pred.transformed(transform);
        let cd = chamfer_distance(&aligned, gt)?;
        let fscore = f_score(&aligned, gt, tau)?;
        cd_sum += cd;
        f_sum += fscore;
        per_instance.push(InstanceMetrics {
            pred_id: pi,
            gt_id: gi,
            cd,
            fscore,
            iou: None,
        });
    }
    let n = matching.len() as f64;
    Ok((cd_sum / n, f_sum / n, per_instance))
}

/// Outcome of matched-box volumetric IoU.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IouReport {
    /// Unweighted mean over contributing pairs; 0 when none contribute.
    pub mean: f64,
    pub per_pair: Vec<(usize, usize, Option<f64>)>,
    /// Pairs skipped because the ground-truth box had zero volume.
    pub skipped: usize,
}

/// Mean intersection-over-union volume of matched AABB pairs. Disjoint
/// boxes contribute 0; pairs with a zero-volume ground-truth box are skipped
/// and recorded.
pub fn volumetric_iou_aabb(
    pred_boxes: &[Aabb],
    gt_boxes: &[Aabb],
    matching: &[(usize, usize)],
) -> Result<IouReport, MetricsError> {
    if matching.is_empty() {
        return Err(MetricsError::EmptyMatching);
    }
    let mut per_pair = Vec::with_capacity(matching.len());
    let mut total = 0.0;
    let mut contributing = 0usize;
    let mut skipped = 0usize;
    for &(pi, gi) in matching {
        let pred = pred_boxes.get(pi).ok_or_else(|| {
            MetricsError::InvalidMatching(format!("prediction box {pi} out of range"))
        })?;
        let gt = gt_boxes.get(gi).ok_or_else(|| {
            MetricsError::InvalidMatching(format!("ground-truth box {gi} out of range"))
        })?;
        if gt.volume() == 0.0 {
            skipped += 1;
            per_pair.push((pi, gi, None));
            continue;
        }
        let inter = pred.intersection_volume(gt);
        let union = pred.volume() + gt.volume() - inter;
        let iou = if union > 0.0 { inter / union } else { 0.0 };
        total += iou;
        contributing += 1;
        per_pair.push((pi, gi, Some(iou)));
    }
    let mean = if contributing > 0 {
        total / contributing as f64
    } else {
        0.0
    };
    Ok(IouReport {
        mean,
        per_pair,
        skipped,
    })
}

/// How prediction instances are paired with ground-truth instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// Pair by instance index (mask order); the paper's protocol.
    ByIndex,
    /// Hungarian assignment maximizing total AABB IoU, for unordered inputs.
    HungarianIou,
}

/// Index pairs `(pred, gt)` for `min(n_pred, n_gt)` instances.
pub fn by_index_matching(n_pred: usize, n_gt: usize) -> Vec<(usize, usize)> {
    (0..n_pred.min(n_gt)).map(|i| (i, i)).collect()
}

/// Hungarian assignment maximizing total pairwise AABB IoU.
pub fn hungarian_iou_matching(pred_boxes: &[Aabb], gt_boxes: &[Aabb]) -> Vec<(usize, usize)> {
    let (np, ng) = (pred_boxes.len(), gt_boxes.len());
    if np == 0 || ng == 0 {
        return Vec::new();
    }
    let iou = |p: &Aabb, g: &Aabb| {
        let inter = p.intersection_volume(g);
        let union = p.volume() + g.volume() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    };
    // Rows must not outnumber columns; transpose when predictions dominate.
    let transposed = np > ng;
    let (rows, cols) = if transposed { (ng, np) } else { (np, ng) };
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let (p, g) = if transposed { (c, r) } else { (r, c) };
                    -iou(&pred_boxes[p], &gt_boxes[g])
                })
                .collect()
        })
        .collect();
    let assignment = hungarian_min_cost(&cost);
    let mut pairs: Vec<(usize, usize)> = assignment
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// O(n^3) Hungarian algorithm (potentials formulation) for a rectangular
/// cost matrix with `rows <= cols`. Returns the assigned column per row.
fn hungarian_min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            ans[matched_row[j] - 1] = j - 1;
        }
    }
    ans
}

/// Alignment provenance carried into a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub provenance: String,
    pub branch: Option<String>,
    pub fitness: f64,
    pub rmse: f64,
}

/// Per-scene evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scene: String,
    pub cd_scene: f64,
    pub fscore_scene: f64,
    pub cd_object: f64,
    pub fscore_object: f64,
    pub iou_b: f64,
    pub per_instance: Vec<InstanceMetrics>,
    pub iou_skipped: usize,
    pub alignment: AlignmentSummary,
}
