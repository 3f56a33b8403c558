//! `scenebench`: scene layout synthesis, view filtering, robust ICP
//! registration, metric evaluation, and attention-kernel verification.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::Deserialize;

use scenebench_core::eval::{run_eval, summary_to_csv, summary_to_json, EvalError, EvalJob};
use scenebench_core::io::{read_obj, read_ply};
use scenebench_core::layout::{synthesize_scene, Asset, AssetCatalog, SpatialRelation, SynthConfig};
use scenebench_core::manifest::{
    load_manifest, manifest_instance_clouds, relative_to, save_manifest, to_stable_json,
    SceneManifest,
};
use scenebench_core::metrics::MatchingMode;
use scenebench_core::registration::{
    dual_normalization_align, robust_icp, IcpConfig, IcpResult, NormalizationBranch, UpAxis,
};
use scenebench_core::sca::verify_kernel;
use scenebench_core::view::{retain_visible_views, CameraPose, VisibilityConfig};

/// Exit codes: 0 ok, 2 validation, 3 runtime, 4 partial failure.
enum CliError {
    Validation(String),
    Runtime(String),
    Partial(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Partial(_) => 4,
        }
    }

    fn report(&self) {
        let (tag, msg) = match self {
            CliError::Validation(m) => ("validation", m),
            CliError::Runtime(m) => ("runtime", m),
            CliError::Partial(m) => ("partial-failure", m),
        };
        eprintln!("error[{tag}]: {msg}");
    }
}

type CliResult = Result<(), CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RelationArg {
    Right,
    Left,
    Front,
    Back,
}

impl From<RelationArg> for SpatialRelation {
    fn from(r: RelationArg) -> Self {
        match r {
            RelationArg::Right => SpatialRelation::Right,
            RelationArg::Left => SpatialRelation::Left,
            RelationArg::Front => SpatialRelation::Front,
            RelationArg::Back => SpatialRelation::Back,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MatchingArg {
    ByIndex,
    HungarianIou,
}

impl From<MatchingArg> for MatchingMode {
    fn from(m: MatchingArg) -> Self {
        match m {
            MatchingArg::ByIndex => MatchingMode::ByIndex,
            MatchingArg::HungarianIou => MatchingMode::HungarianIou,
        }
    }
}

#[derive(Parser)]
#[command(name = "scenebench", version, about)]
struct Cli {
    /// Master seed for every stochastic stage.
    #[arg(long, global = true, env = "SCENEBENCH_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for batch evaluation.
    #[arg(long, global = true, env = "SCENEBENCH_WORKERS", default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true, env = "SCENEBENCH_LOG_LEVEL", value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate collision-free random scenes from a mesh asset directory.
    Synth {
        /// Number of scenes to generate.
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        min_objects: usize,
        #[arg(long, default_value_t = 12)]
        max_objects: usize,
        /// Directory of OBJ assets.
        #[arg(long, env = "SCENEBENCH_ASSETS")]
        assets: PathBuf,
        /// Output directory for scene manifests.
        #[arg(long)]
        out: PathBuf,
        /// Optional table asset (OBJ); placed first, one object stacked on it.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Constrain consecutive placements to one planar relation.
        #[arg(long, value_enum)]
        relation: Option<RelationArg>,
    },
    /// Score camera views of a scene and drop views with occluded instances.
    Views {
        /// Scene manifest produced by `synth`.
        #[arg(long)]
        scene: PathBuf,
        /// JSON list of cameras: [{"position": [..], "look_at": [..], "up": [..]}].
        #[arg(long)]
        cameras: PathBuf,
        /// Drop views where any instance is fully occluded.
        #[arg(long, default_value_t = false)]
        discard_occluded: bool,
        #[arg(long, default_value_t = 512)]
        raster: usize,
        /// Surface samples per instance.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        /// Write the retained-view report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align a source cloud to a target cloud with robust ICP.
    Icp {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Estimate a global isotropic scale jointly with the rigid motion.
        #[arg(long, default_value_t = false)]
        scale: bool,
        /// Total iteration budget split across coarse and fine stages.
        #[arg(long, default_value_t = 60)]
        iters: usize,
        /// Up axis for the yaw sweep.
        #[arg(long, default_value = "y")]
        up: UpAxis,
        /// Voxel size in shared-normalized units.
        #[arg(long, default_value_t = 0.03)]
        voxel_size: f64,
        /// Run both normalization branches (native range `LO,HI`) and keep
        /// the better one.
        #[arg(long, value_parser = parse_range)]
        native_range: Option<(f64, f64)>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate predicted scenes against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// F-score distance threshold in the alignment space.
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = MatchingArg::ByIndex)]
        matching: MatchingArg,
        /// Native output range for the min/max normalization branch.
        #[arg(long, value_parser = parse_range, default_value = "-0.5,0.5")]
        native_range: (f64, f64),
        /// Surface samples per OBJ instance.
        #[arg(long, default_value_t = 10000)]
        samples: usize,
        /// Estimate isotropic scale during alignment.
        #[arg(long, default_value_t = false)]
        scale: bool,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a CSV table (CD-S, F-Score-S, CD-O, F-Score-O, IoU-B).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Verify the attention/flow kernel identities.
    VerifySca {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected LO,HI".into());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    if hi <= lo {
        return Err(format!("range [{lo}, {hi}] is empty"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth {
            count,
            min_objects,
            max_objects,
            assets,
            out,
            table,
            relation,
        } => cmd_synth(
            &cli,
            *count,
            *min_objects,
            *max_objects,
            assets,
            out,
            table.as_deref(),
            *relation,
        ),
        Command::Views {
            scene,
            cameras,
            discard_occluded,
            raster,
            samples,
            out,
        } => cmd_views(
            &cli,
            scene,
            cameras,
            *discard_occluded,
            *raster,
            *samples,
            out.as_deref(),
        ),
        Command::Icp {
            source,
            target,
            scale,
            iters,
            up,
            voxel_size,
            native_range,
            report,
        } => cmd_icp(
            &cli,
            source,
            target,
            *scale,
            *iters,
            *up,
            *voxel_size,
            *native_range,
            report.as_deref(),
        ),
        Command::Eval {
            pred,
            gt,
            tau,
            matching,
            native_range,
            samples,
            scale,
            out,
            csv,
        } => cmd_eval(
            &cli,
            pred,
            gt,
            *tau,
            (*matching).into(),
            *native_range,
            *samples,
            *scale,
            out.as_deref(),
            csv.as_deref(),
        ),
        Command::VerifySca { trials } => cmd_verify_sca(&cli, *trials),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.code())
        }
    }
}

fn info(cli: &Cli, msg: impl std::fmt::Display) {
    if cli.log_level >= LogLevel::Info {
        eprintln!("[info] {msg}");
    }
}

fn load_assets(dir: &Path, table: Option<&Path>) -> Result<AssetCatalog, CliError> {
    if !dir.is_dir() {
        return Err(validation(format!("{} is not a directory", dir.display())));
    }
    let table_canon = table
        .map(|t| t.canonicalize().map_err(runtime))
        .transpose()?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(runtime)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("obj"))
        .collect();
    paths.sort();
    let mut objects = Vec::new();
    for path in paths {
        let canon = path.canonicalize().map_err(runtime)?;
        if Some(&canon) == table_canon.as_ref() {
            continue;
        }
        let mesh = read_obj(&path).map_err(runtime)?;
        objects.push(Asset {
            path: canon.to_string_lossy().into_owned(),
            mesh,
        });
    }
    if objects.is_empty() {
        return Err(validation(format!(
            "no OBJ assets found under {}",
            dir.display()
        )));
    }
    let table = match (table, table_canon) {
        (Some(path), Some(canon)) => Some(Asset {
            path: canon.to_string_lossy().into_owned(),
            mesh: read_obj(path).map_err(runtime)?,
        }),
        _ => None,
    };
    Ok(AssetCatalog { objects, table })
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    cli: &Cli,
    count: usize,
    min_objects: usize,
    max_objects: usize,
    assets: &Path,
    out: &Path,
    table: Option<&Path>,
    relation: Option<RelationArg>,
) -> CliResult {
    if count == 0 {
        return Err(validation("--count must be at least 1"));
    }
    if !(2..=12).contains(&min_objects)
        || !(2..=12).contains(&max_objects)
        || min_objects > max_objects
    {
        return Err(validation(
            "--min-objects/--max-objects must satisfy 2 <= min <= max <= 12",
        ));
    }
    let catalog = load_assets(assets, table)?;
    std::fs::create_dir_all(out).map_err(runtime)?;
    let out_canon = out.canonicalize().map_err(runtime)?;

    // Manifests reference meshes relative to their own directory.
    let rel_catalog = AssetCatalog {
        objects: catalog
            .objects
            .iter()
            .map(|a| Asset {
                path: relative_to(&out_canon, Path::new(&a.path))
                    .to_string_lossy()
                    .into_owned(),
                mesh: a.mesh.clone(),
            })
            .collect(),
        table: catalog.table.as_ref().map(|a| Asset {
            path: relative_to(&out_canon, Path::new(&a.path))
                .to_string_lossy()
                .into_owned(),
            mesh: a.mesh.clone(),
        }),
    };

    let config = SynthConfig {
        min_objects,
        max_objects,
        relation_constraint: relation.map(Into::into),
        ..Default::default()
    };
    let mut failures = 0usize;
    for i in 0..count {
        let seed = cli.seed.wrapping_add(i as u64);
        match synthesize_scene(&rel_catalog, &config, seed) {
            Ok(synth) => {
                let manifest =
                    SceneManifest::from_scene(&synth.scene, |p| rel_catalog.resolve(p))
                        .map_err(runtime)?;
                let path = out_canon.join(format!("scene_{i:04}.json"));
                save_manifest(&path, &manifest).map_err(runtime)?;
                info(
                    cli,
                    format!(
                        "wrote {} ({} instances, {} expansions)",
                        path.display(),
                        manifest.instances.len(),
                        manifest.expansions
                    ),
                );
            }
            Err(e) => {
                failures += 1;
                eprintln!("[warn] scene {i} (seed {seed}) failed: {e}");
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Partial(format!(
            "{failures}/{count} scenes failed to generate"
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
struct CameraFileEntry {
    position: [f64; 3],
    look_at: [f64; 3],
    #[serde(default = "default_up")]
    up: [f64; 3],
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn cmd_views(
    cli: &Cli,
    scene: &Path,
    cameras: &Path,
    discard_occluded: bool,
    raster: usize,
    samples: usize,
    out: Option<&Path>,
) -> CliResult {
    let manifest = load_manifest(scene).map_err(|e| validation(e.to_string()))?;
    let text = std::fs::read_to_string(cameras).map_err(runtime)?;
    let entries: Vec<CameraFileEntry> =
        serde_json::from_str(&text).map_err(|e| validation(format!("cameras file: {e}")))?;
    let mut poses = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let pose = CameraPose::new(
            Vector3::from(e.position),
            Vector3::from(e.look_at),
            Vector3::from(e.up),
        )
        .map_err(|err| validation(format!("camera {i}: {err}")))?;
        poses.push(pose);
    }
    if poses.is_empty() {
        return Err(validation("cameras file lists no cameras"));
    }

    let base = scene.parent().unwrap_or_else(|| Path::new("."));
    let clouds =
        manifest_instance_clouds(&manifest, base, samples, cli.seed).map_err(runtime)?;
    let config = VisibilityConfig {
        raster,
        discard_threshold: if discard_occluded { 0.0 } else { -1.0 },
        ..Default::default()
    };
    let kept = retain_visible_views(&clouds, &poses, &config)
        .map_err(|e| validation(e.to_string()))?;

    let report = serde_json::json!({
        "schema_version": 1,
        "total_views": poses.len(),
        "retained": kept.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
        "fractions": kept
            .iter()
            .map(|(i, f)| serde_json::json!({"view": i, "per_instance": f}))
            .collect::<Vec<_>>(),
    });
    let text = to_stable_json(&report);
    match out {
        Some(path) => std::fs::write(path, &text).map_err(runtime)?,
        None => print!("{text}"),
    }
    info(
        cli,
        format!("{} of {} views retained", kept.len(), poses.len()),
    );
    Ok(())
}

fn transform_row_major(t: &scenebench_core::SimilarityTransform) -> Vec<f64> {
    let m = t.to_matrix4();
    (0..4)
        .flat_map(|r| (0..4).map(move |c| m[(r, c)]))
        .collect()
}

fn icp_report_json(result: &IcpResult, extra: serde_json::Value) -> serde_json::Value {
    let mut report = serde_json::json!({
        "schema_version": 1,
        "transform": transform_row_major(&result.transform),
        "transform_denormalized": transform_row_major(&result.denormalized_transform()),
        "fitness": result.fitness,
        "rmse": result.rmse,
        "provenance": match result.provenance {
            scenebench_core::registration::StageProvenance::Fine => "fine",
            scenebench_core::registration::StageProvenance::CoarseFallback => "coarse_fallback",
            scenebench_core::registration::StageProvenance::IdentityFallback => "identity_fallback",
        },
        "branch": result.branch.map(|b| match b {
            NormalizationBranch::Minmax => "minmax",
            NormalizationBranch::AabbRecentered => "aabb_recentered",
        }),
        "normalization": {
            "center": [result.normalization.center.x, result.normalization.center.y, result.normalization.center.z],
            "sigma": result.normalization.sigma,
        },
    });
    if let serde_json::Value::Object(extra_map) = extra {
        report.as_object_mut().unwrap().extend(extra_map);
    }
    report
}

#[allow(clippy::too_many_arguments)]
fn cmd_icp(
    cli: &Cli,
    source: &Path,
    target: &Path,
    scale: bool,
    iters: usize,
    up: UpAxis,
    voxel_size: f64,
    native_range: Option<(f64, f64)>,
    report_path: Option<&Path>,
) -> CliResult {
    if voxel_size <= 0.0 {
        return Err(validation("--voxel-size must be positive"));
    }
    if iters == 0 {
        return Err(validation("--iters must be at least 1"));
    }
    let source_cloud = read_ply(source).map_err(|e| validation(e.to_string()))?;
    let target_cloud = read_ply(target).map_err(|e| validation(e.to_string()))?;
    if source_cloud.is_empty() || target_cloud.is_empty() {
        return Err(validation("source and target must be non-empty"));
    }

    let mut config = IcpConfig::with_voxel_size(voxel_size);
    config.estimate_scale = scale;
    config.total_iterations = iters;
    config.up_axis = up;
    config.seed = cli.seed;

    let report = match native_range {
        Some(range) => {
            let dual = dual_normalization_align(&source_cloud, &target_cloud, &config, range)
                .map_err(|e| validation(e.to_string()))?;
            icp_report_json(
                &dual.result,
                serde_json::json!({
                    "fscore_minmax": dual.fscore_minmax,
                    "fscore_aabb": dual.fscore_aabb,
                }),
            )
        }
        None => {
            let result = robust_icp(&source_cloud, &target_cloud, &config);
            icp_report_json(&result, serde_json::json!({}))
        }
    };
    let text = to_stable_json(&report);
    match report_path {
        Some(path) => {
            std::fs::write(path, &text).map_err(runtime)?;
            info(cli, format!("report written to {}", path.display()));
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cli: &Cli,
    pred: &Path,
    gt: &Path,
    tau: f64,
    matching: MatchingMode,
    native_range: (f64, f64),
    samples: usize,
    scale: bool,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> CliResult {
    if tau <= 0.0 {
        return Err(validation("--tau must be positive"));
    }
    let mut job = EvalJob::new(pred, gt);
    job.tau = tau;
    job.matching = matching;
    job.native_range = native_range;
    job.mesh_samples = samples;
    job.workers = cli.workers;
    job.seed = cli.seed;
    job.icp.seed = cli.seed;
    job.icp.estimate_scale = scale;

    let summary = run_eval(&job).map_err(|e| match e {
        EvalError::Job(msg) => validation(msg),
        EvalError::Io(err) => runtime(err),
    })?;

    let json = summary_to_json(&summary);
    match out {
        Some(path) => std::fs::write(path, &json).map_err(runtime)?,
        None => print!("{json}"),
    }
    if let Some(path) = csv {
        std::fs::write(path, summary_to_csv(&summary)).map_err(runtime)?;
    }
    if let Some(agg) = &summary.aggregate {
        info(
            cli,
            format!(
                "CD-S {:.4}  F-Score-S {:.2}  CD-O {:.4}  F-Score-O {:.2}  IoU-B {:.4}  ({} scenes)",
                agg.cd_scene,
                agg.fscore_scene,
                agg.cd_object,
                agg.fscore_object,
                agg.iou_b,
                summary.scenes_scored
            ),
        );
    }
    if summary.has_failures() {
        return Err(CliError::Partial(format!(
            "{} of {} scenes failed",
            summary.scenes_failed,
            summary.scenes_failed + summary.scenes_scored
        )));
    }
    Ok(())
}

fn cmd_verify_sca(cli: &Cli, trials: usize) -> CliResult {
    if trials == 0 {
        return Err(validation("--trials must be at least 1"));
    }
    let report = verify_kernel(trials, cli.seed).map_err(runtime)?;
    println!(
        "sca equivalence      max deviation {:.3e} (tolerance {:.0e})",
        report.max_sca_deviation,
        scenebench_core::sca::SCA_EQUIVALENCE_TOL
    );
    println!(
        "duplicated softmax   max deviation {:.3e} (tolerance {:.0e})",
        report.max_softmax_deviation,
        scenebench_core::sca::SOFTMAX_IDENTITY_TOL
    );
    println!(
        "cfm gradient         max rel error {:.3e} (tolerance {:.0e})",
        report.max_grad_rel_error,
        scenebench_core::sca::CFM_GRAD_REL_TOL
    );
    if !report.passed() {
        return Err(CliError::Runtime(
            "kernel verification exceeded tolerance".into(),
        ));
    }
    println!("verified {} trials", report.trials);
    Ok(())
}
