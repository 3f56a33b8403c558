//! Batch evaluation: per-scene dual-normalization alignment followed by
//! scene/object-level metrics and matched AABB IoU.
//!
//! Scene directories are matched by name between the prediction and
//! ground-truth roots. Within a scene directory every `*.ply` file is an
//! instance point cloud and every `*.obj` is an instance mesh (sampled to
//! `mesh_samples` points); files pair by sorted filename in `by_index` mode.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, PointCloud, SpaceTag};
use crate::io::{read_obj, read_ply};
use crate::metrics::{
    by_index_matching, hungarian_iou_matching, object_level_metrics, scene_level_metrics,
    volumetric_iou_aabb, AlignmentSummary, MatchingMode, MetricsReport,
};
use crate::registration::{dual_normalization_align, IcpConfig, NormalizationBranch};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("job error: {0}")]
    Job(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct EvalJob {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub icp: IcpConfig,
    pub tau: f64,
    pub matching: MatchingMode,
    /// Native output range of the generator under evaluation, for the
    /// min/max normalization branch.
    pub native_range: (f64, f64),
    /// Surface samples per mesh instance.
    pub mesh_samples: usize,
    pub workers: usize,
    pub seed: u64,
}

impl EvalJob {
    pub fn new(pred_dir: impl Into<PathBuf>, gt_dir: impl Into<PathBuf>) -> Self {
        Self {
            pred_dir: pred_dir.into(),
            gt_dir: gt_dir.into(),
            icp: IcpConfig::default(),
            tau: 0.1,
            matching: MatchingMode::ByIndex,
            native_range: (-0.5, 0.5),
            mesh_samples: 10_000,
            workers: 1,
            seed: 0,
        }
    }
}

/// One scene's outcome: a report, or the error that prevented one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

/// Mean metrics over all scored scenes, in the paper's column order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cd_scene: f64,
    pub fscore_scene: f64,
    pub cd_object: f64,
    pub fscore_object: f64,
    pub iou_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub tau: f64,
    pub matching: MatchingMode,
    pub scenes_scored: usize,
    pub scenes_failed: usize,
    pub aggregate: Option<AggregateRow>,
    pub scenes: Vec<SceneOutcome>,
}

impl EvalSummary {
    pub fn has_failures(&self) -> bool {
        self.scenes_failed > 0
    }
}

/// Deterministic JSON rendering of a summary (sorted keys, two-space indent).
pub fn summary_to_json(summary: &EvalSummary) -> String {
    let value = serde_json::to_value(summary).expect("summary serializes");
    crate::manifest::to_stable_json(&value)
}

/// CSV table mirroring the paper's column layout.
pub fn summary_to_csv(summary: &EvalSummary) -> String {
    let mut out = String::from("scene,cd_s,fscore_s,cd_o,fscore_o,iou_b\n");
    for outcome in &summary.scenes {
        if let Some(r) = &outcome.report {
            out.push_str(&format!(
                "{},{:.4},{:.2},{:.4},{:.2},{:.4}\n",
                outcome.scene, r.cd_scene, r.fscore_scene, r.cd_object, r.fscore_object, r.iou_b
            ));
        } else {
            out.push_str(&format!("{},failed,,,,\n", outcome.scene));
        }
    }
    if let Some(a) = &summary.aggregate {
        out.push_str(&format!(
            "mean,{:.4},{:.2},{:.4},{:.2},{:.4}\n",
            a.cd_scene, a.fscore_scene, a.cd_object, a.fscore_object, a.iou_b
        ));
    }
    out
}

fn scene_dirs(root: &Path) -> Result<Vec<String>, EvalError> {
    if !root.is_dir() {
        return Err(EvalError::Job(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn instance_files(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut files = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for entry in entries {
        let entry = entry.map_err(|e| e.to_string())?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("ply") | Some("obj")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_instances(
    dir: &Path,
    mesh_samples: usize,
    seed: u64,
) -> Result<Vec<PointCloud>, String> {
    let files = instance_files(dir)?;
    if files.is_empty() {
        return Err(format!("{} contains no .ply or .obj instances", dir.display()));
    }
    let mut clouds = Vec::with_capacity(files.len());
    for (idx, path) in files.iter().enumerate() {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let cloud = match ext.as_deref() {
            Some("ply") => read_ply(path).map_err(|e| e.to_string())?,
            Some("obj") => {
                let mesh = read_obj(path).map_err(|e| e.to_string())?;
                mesh.sample_surface(mesh_samples, seed ^ ((idx as u64) << 13))
                    .map_err(|e| e.to_string())?
            }
            _ => unreachable!("filtered above"),
        };
        if cloud.is_empty() {
            return Err(format!("{} is empty", path.display()));
        }
        clouds.push(cloud);
    }
    Ok(clouds)
}

fn boxes_of(instances: &[PointCloud]) -> Result<Vec<Aabb>, String> {
    instances
        .iter()
        .map(|c| c.aabb().map_err(|e| e.to_string()))
        .collect()
}

fn evaluate_scene(job: &EvalJob, scene: &str) -> Result<MetricsReport, String> {
    let pred_instances = load_instances(&job.pred_dir.join(scene), job.mesh_samples, job.seed)?;
    let gt_instances = load_instances(&job.gt_dir.join(scene), job.mesh_samples, job.seed)?;

    let pred_refs: Vec<&PointCloud> = pred_instances.iter().collect();
    let gt_refs: Vec<&PointCloud> = gt_instances.iter().collect();
    let pred_union = PointCloud::concat(&pred_refs).map_err(|e| e.to_string())?;
    let gt_union = PointCloud::concat(&gt_refs).map_err(|e| e.to_string())?;

    let dual = dual_normalization_align(&pred_union, &gt_union, &job.icp, job.native_range)
        .map_err(|e| e.to_string())?;
    let result = &dual.result;
    let norm = &result.normalization;

    // Metric space: the winning branch's pre-transform followed by the
    // shared normalization in which the ICP transform is expressed.
    let to_metric = |cloud: &PointCloud, pre: &crate::geom::SimilarityTransform| {
        let pts = cloud
            .points()
            .iter()
            .map(|p| norm.apply(&pre.apply(p)))
            .collect();
        PointCloud::from_parts_unchecked(pts, None, SpaceTag::SharedNormalized)
    };
    let pred_n: Vec<PointCloud> = pred_instances
        .iter()
        .map(|c| to_metric(c, &dual.pred_pretransform))
        .collect();
    let gt_n: Vec<PointCloud> = gt_instances
        .iter()
        .map(|c| to_metric(c, &dual.gt_pretransform))
        .collect();

    let (cd_scene, fscore_scene) =
        scene_level_metrics(&pred_n, &gt_n, &result.transform, job.tau)
            .map_err(|e| e.to_string())?;

    let aligned_pred: Vec<PointCloud> = pred_n
        .iter()
        .map(|c| c.transformed(&result.transform))
        .collect();
    let matching = match job.matching {
        MatchingMode::ByIndex => by_index_matching(pred_n.len(), gt_n.len()),
        MatchingMode::HungarianIou => {
            let pred_boxes = boxes_of(&aligned_pred)?;
            let gt_boxes = boxes_of(&gt_n)?;
            hungarian_iou_matching(&pred_boxes, &gt_boxes)
        }
    };

    let (cd_object, fscore_object, mut per_instance) =
        object_level_metrics(&pred_n, &gt_n, &matching, &result.transform, job.tau)
            .map_err(|e| e.to_string())?;

    let pred_boxes = boxes_of(&aligned_pred)?;
    let gt_boxes = boxes_of(&gt_n)?;
    let iou = volumetric_iou_aabb(&pred_boxes, &gt_boxes, &matching).map_err(|e| e.to_string())?;
    for (inst, (_, _, pair_iou)) in per_instance.iter_mut().zip(&iou.per_pair) {
        inst.iou = *pair_iou;
    }

    Ok(MetricsReport {
        scene: scene.to_string(),
        cd_scene,
        fscore_scene,
        cd_object,
        fscore_object,
        iou_b: iou.mean,
        per_instance,
        iou_skipped: iou.skipped,
        alignment: AlignmentSummary {
            provenance: format!("{:?}", result.provenance),
            branch: result.branch.map(|b| match b {
                NormalizationBranch::Minmax => "minmax".to_string(),
                NormalizationBranch::AabbRecentered => "aabb_recentered".to_string(),
            }),
            fitness: result.fitness,
            rmse: result.rmse,
        },
    })
}

/// Evaluate every scene under the job's directories. Per-scene failures are
/// recorded, never fatal; the batch aborts only when the directories
/// themselves are unusable.
pub fn run_eval(job: &EvalJob) -> Result<EvalSummary, EvalError> {
    let pred_scenes = scene_dirs(&job.pred_dir)?;
    let gt_scenes = scene_dirs(&job.gt_dir)?;
    if pred_scenes.is_empty() {
        return Err(EvalError::Job(format!(
            "no scene directories under {}",
            job.pred_dir.display()
        )));
    }
    if job.matching == MatchingMode::ByIndex && pred_scenes.len() != gt_scenes.len() {
        return Err(EvalError::Job(format!(
            "by_index matching requires equal scene counts (pred {}, gt {})",
            pred_scenes.len(),
            gt_scenes.len()
        )));
    }
    let scenes: Vec<String> = pred_scenes
        .into_iter()
        .filter(|s| gt_scenes.contains(s))
        .collect();
    if scenes.is_empty() {
        return Err(EvalError::Job(
            "no scene names shared between pred and gt".into(),
        ));
    }

    let worker_count = job.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count)
        .build()
        .map_err(|e| EvalError::Job(e.to_string()))?;
    let outcomes: Vec<SceneOutcome> = pool.install(|| {
        scenes
            .par_iter()
            .map(|scene| match evaluate_scene(job, scene) {
                Ok(report) => SceneOutcome {
                    scene: scene.clone(),
                    report: Some(report),
                    error: None,
                },
                Err(e) => SceneOutcome {
                    scene: scene.clone(),
                    report: None,
                    error: Some(e),
                },
            })
            .collect()
    });

    let scored: Vec<&MetricsReport> =
        outcomes.iter().filter_map(|o| o.report.as_ref()).collect();
    let aggregate = if scored.is_empty() {
        None
    } else {
        let n = scored.len() as f64;
        Some(AggregateRow {
            cd_scene: scored.iter().map(|r| r.cd_scene).sum::<f64>() / n,
            fscore_scene: scored.iter().map(|r| r.fscore_scene).sum::<f64>() / n,
            cd_object: scored.iter().map(|r| r.cd_object).sum::<f64>() / n,
            fscore_object: scored.iter().map(|r| r.fscore_object).sum::<f64>() / n,
            iou_b: scored.iter().map(|r| r.iou_b).sum::<f64>() / n,
        })
    };
    Ok(EvalSummary {
        schema_version: 1,
        tau: job.tau,
        matching: job.matching,
        scenes_scored: scored.len(),
        scenes_failed: outcomes.len() - scored.len(),
        aggregate,
        scenes: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_ply, PlyFormat};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob_cloud(seed: u64, center: Vector3<f64>, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                center
                    + Vector3::new(
                        rng.random_range(-0.15..0.15),
                        rng.random_range(0.0..0.2),
                        rng.random_range(-0.15..0.15),
                    )
            })
            .collect();
        PointCloud::new(pts, SpaceTag::Raw).unwrap()
    }

    fn write_scene(root: &Path, scene: &str, clouds: &[PointCloud]) {
        let dir = root.join(scene);
        std::fs::create_dir_all(&dir).unwrap();
        for (i, c) in clouds.iter().enumerate() {
            write_ply(
                dir.join(format!("instance_{i:03}.ply")),
                c,
                PlyFormat::BinaryLittleEndian,
            )
            .unwrap();
        }
    }

    fn perfect_job(tmp: &Path, scenes: usize) -> EvalJob {
        let pred = tmp.join("pred");
        let gt = tmp.join("gt");
        for s in 0..scenes {
            let name = format!("scene_{s:04}");
            let clouds: Vec<PointCloud> = (0..3)
                .map(|i| {
                    blob_cloud(
                        s as u64 * 10 + i as u64,
                        Vector3::new(i as f64 * 0.8 - 0.8, 0.0, (i % 2) as f64 * 0.6),
                        400,
                    )
                })
                .collect();
            write_scene(&pred, &name, &clouds);
            write_scene(&gt, &name, &clouds);
        }
        EvalJob::new(pred, gt)
    }

    #[test]
    fn perfect_prediction_scores_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let job = perfect_job(tmp.path(), 2);
        let summary = run_eval(&job).unwrap();
        assert_eq!(summary.scenes_scored, 2);
        assert_eq!(summary.scenes_failed, 0);
        let agg = summary.aggregate.as_ref().unwrap();
        assert_eq!(agg.cd_scene, 0.0);
        assert_eq!(agg.fscore_scene, 100.0);
        assert_eq!(agg.cd_object, 0.0);
        assert_eq!(agg.fscore_object, 100.0);
        assert_eq!(agg.iou_b, 1.0);
    }

    #[test]
    fn corrupt_scene_is_isolated() {
        let tmp = tempfile::tempdir().unwrap();
        let job = perfect_job(tmp.path(), 3);
        // Corrupt one prediction scene.
        let victim = job.pred_dir.join("scene_0001").join("instance_000.ply");
        std::fs::write(&victim, b"not a ply").unwrap();
        let summary = run_eval(&job).unwrap();
        assert_eq!(summary.scenes_scored, 2);
        assert_eq!(summary.scenes_failed, 1);
        let failed: Vec<_> = summary
            .scenes
            .iter()
            .filter(|o| o.error.is_some())
            .collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].scene, "scene_0001");
    }

    #[test]
    fn reports_identical_across_worker_counts() {
        let tmp = tempfile::tempdir().unwrap();
        let mut job = perfect_job(tmp.path(), 3);
        let single = summary_to_json(&run_eval(&job).unwrap());
        job.workers = 4;
        let parallel = summary_to_json(&run_eval(&job).unwrap());
        assert_eq!(single, parallel);
        let csv_a = summary_to_csv(&run_eval(&job).unwrap());
        job.workers = 1;
        let csv_b = summary_to_csv(&run_eval(&job).unwrap());
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn hungarian_matches_shuffled_instances_like_by_index() {
        let tmp = tempfile::tempdir().unwrap();
        let pred = tmp.path().join("pred");
        let gt = tmp.path().join("gt");
        let clouds: Vec<PointCloud> = (0..4)
            .map(|i| {
                blob_cloud(
                    40 + i as u64,
                    Vector3::new(i as f64 * 1.0 - 1.5, 0.0, (i % 2) as f64),
                    300,
                )
            })
            .collect();
        // gt in canonical order; pred files shuffled (reverse order).
        let reversed: Vec<PointCloud> = clouds.iter().rev().cloned().collect();
        write_scene(&pred, "scene_0000", &reversed);
        write_scene(&gt, "scene_0000", &clouds);

        let mut job = EvalJob::new(pred, gt);
        job.matching = MatchingMode::HungarianIou;
        let summary = run_eval(&job).unwrap();
        let report = summary.scenes[0].report.as_ref().unwrap();
        // A permutation-only perturbation must still score perfectly.
        assert_eq!(report.fscore_object, 100.0);
        assert_eq!(report.cd_object, 0.0);
        assert_eq!(report.iou_b, 1.0);
    }

    #[test]
    fn empty_directories_are_a_job_error() {
        let tmp = tempfile::tempdir().unwrap();
        let pred = tmp.path().join("pred");
        let gt = tmp.path().join("gt");
        std::fs::create_dir_all(&pred).unwrap();
        std::fs::create_dir_all(&gt).unwrap();
        assert!(matches!(
            run_eval(&EvalJob::new(pred, gt)),
            Err(EvalError::Job(_))
        ));
    }
}
