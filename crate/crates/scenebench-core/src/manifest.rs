//! Scene manifests: a stable, diff-able text serialization of generated
//! layouts.
//!
//! Keys are emitted in sorted order and every float is printed with 9
//! significant digits (`{:.8e}`). Float fields are quantized through that
//! same formatting when a manifest is built, so save -> load -> save is
//! byte-identical and load(save(m)) == m structurally.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointCloud, SpaceTag, TriangleMesh};
use crate::io::read_obj;
use crate::layout::{
    instance_world_transform, InstanceSpec, LayoutScene, PlacedInstance, Rect, SpatialRelation,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}:{column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("unsupported manifest schema version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u64 },
    #[error("invalid manifest: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestAabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInstance {
    pub id: usize,
    pub mesh_path: String,
    pub is_table: bool,
    pub base_radius: f64,
    pub scale: f64,
    /// World position: footprint center x, support height, footprint center z.
    pub center: [f64; 3],
    pub yaw: f64,
    pub effective_radius: f64,
    pub stacked_on: Option<usize>,
    /// World-space AABB of the transformed mesh.
    pub aabb: ManifestAabb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub space_tag: SpaceTag,
    pub gap: f64,
    pub expansions: u64,
    pub region: ManifestRect,
    pub instances: Vec<ManifestInstance>,
    pub relations: Vec<(usize, usize, SpatialRelation)>,
}

/// Quantize a float through the manifest's 9-significant-digit formatting.
#[inline]
pub fn q9(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float reparses")
}

fn q9_3(v: &nalgebra::Vector3<f64>) -> [f64; 3] {
    [q9(v.x), q9(v.y), q9(v.z)]
}

impl SceneManifest {
    /// Build a manifest from a generated scene. `resolve_mesh` supplies the
    /// mesh behind each `mesh_path` so world AABBs can be computed.
    pub fn from_scene<'a>(
        scene: &LayoutScene,
        mut resolve_mesh: impl FnMut(&str) -> Option<&'a TriangleMesh>,
    ) -> Result<SceneManifest, ManifestError> {
        let mut instances = Vec::with_capacity(scene.instances.len());
        for (id, placed) in scene.instances.iter().enumerate() {
            let mesh = resolve_mesh(&placed.spec.mesh_path).ok_or_else(|| {
                ManifestError::Validation(format!(
                    "mesh path '{}' cannot be resolved",
                    placed.spec.mesh_path
                ))
            })?;
            let world = mesh
                .transformed(&instance_world_transform(mesh, placed).map_err(|e| {
                    ManifestError::Validation(format!("instance {id}: {e}"))
                })?);
            let aabb = world
                .aabb()
                .map_err(|e| ManifestError::Validation(format!("instance {id}: {e}")))?;
            instances.push(ManifestInstance {
                id,
                mesh_path: placed.spec.mesh_path.clone(),
                is_table: placed.spec.is_table,
                base_radius: q9(placed.spec.base_radius),
                scale: q9(placed.spec.scale),
                center: [q9(placed.center.x), q9(placed.height), q9(placed.center.y)],
                yaw: q9(placed.yaw),
                effective_radius: q9(placed.effective_radius),
                stacked_on: placed.stacked_on,
                aabb: ManifestAabb {
                    min: q9_3(&aabb.min),
                    max: q9_3(&aabb.max),
                },
            });
        }
        Ok(SceneManifest {
            schema_version: SCHEMA_VERSION,
            seed: scene.rng_seed,
            space_tag: SpaceTag::Raw,
            gap: q9(scene.gap),
            expansions: scene.expansions as u64,
            region: ManifestRect {
                min: [q9(scene.region.min.x), q9(scene.region.min.y)],
                max: [q9(scene.region.max.x), q9(scene.region.max.y)],
            },
            instances,
            relations: scene.relations.clone(),
        })
    }

    /// Rebuild the layout scene this manifest describes.
    pub fn to_scene(&self) -> LayoutScene {
        let instances = self
            .instances
            .iter()
            .map(|m| PlacedInstance {
                spec: InstanceSpec {
                    mesh_path: m.mesh_path.clone(),
                    base_radius: m.base_radius,
                    scale: m.scale,
                    is_table: m.is_table,
                },
                center: nalgebra::Vector2::new(m.center[0], m.center[2]),
                height: m.center[1],
                yaw: m.yaw,
                effective_radius: m.effective_radius,
                stacked_on: m.stacked_on,
            })
            .collect();
        LayoutScene {
            instances,
            gap: self.gap,
            region: Rect::new(
                nalgebra::Vector2::new(self.region.min[0], self.region.min[1]),
                nalgebra::Vector2::new(self.region.max[0], self.region.max[1]),
            ),
            relations: self.relations.clone(),
            rng_seed: self.seed,
            expansions: self.expansions as usize,
        }
    }

    fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = std::collections::HashSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.id) {
                return Err(ManifestError::Validation(format!(
                    "duplicate instance id {}",
                    inst.id
                )));
            }
            if let Some(base) = inst.stacked_on {
                if self.instances.iter().all(|i| i.id != base) {
                    return Err(ManifestError::Validation(format!(
                        "instance {} stacked on unknown id {base}",
                        inst.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Serialize any JSON value with sorted keys, two-space indentation, and
/// floats printed as 9-significant-digit scientific notation.
pub fn to_stable_json(value: &serde_json::Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &serde_json::Value, indent: usize, out: &mut String) {
    match value {
        serde_json::Value::Null => out.push_str("null"),
        serde_json::Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        serde_json::Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                let f = n.as_f64().expect("number is u64, i64 or f64");
                out.push_str(&format!("{f:.8e}"));
            }
        }
        serde_json::Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serializes"));
        }
        serde_json::Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent + 1));
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            out.push_str(&"  ".repeat(indent));
            out.push(']');
        }
        serde_json::Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            // serde_json's default map is a BTreeMap: iteration is sorted.
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&"  ".repeat(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_value(v, indent + 1, out);
            }
            out.push('\n');
            out.push_str(&"  ".repeat(indent));
            out.push('}');
        }
    }
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &SceneManifest) -> Result<(), ManifestError> {
    let value = serde_json::to_value(manifest)
        .map_err(|e| ManifestError::Validation(e.to_string()))?;
    fs::write(path.as_ref(), to_stable_json(&value))?;
    Ok(())
}

/// Load and fully validate a manifest: schema version, unique ids, and
/// resolvable mesh paths (relative paths resolve against the manifest's
/// directory).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SceneManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;

    // Version gate first so newer schemas fail with a version error rather
    // than a field mismatch.
    #[derive(Deserialize)]
    struct VersionProbe {
        schema_version: u64,
    }
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| parse_error(path, &e))?;
    if probe.schema_version != SCHEMA_VERSION as u64 {
        return Err(ManifestError::Version {
            found: probe.schema_version,
        });
    }

    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| parse_error(path, &e))?;
    manifest.validate()?;

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for inst in &manifest.instances {
        let mesh_path = resolve_path(base, &inst.mesh_path);
        if !mesh_path.is_file() {
            return Err(ManifestError::Validation(format!(
                "mesh path '{}' does not resolve to a file (looked at {})",
                inst.mesh_path,
                mesh_path.display()
            )));
        }
    }
    Ok(manifest)
}

fn parse_error(path: &Path, e: &serde_json::Error) -> ManifestError {
    ManifestError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    }
}

pub fn resolve_path(base: &Path, mesh_path: &str) -> PathBuf {
    let p = Path::new(mesh_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Relative path from `base` to `target` when both are absolute and share a
/// prefix; falls back to the absolute target.
pub fn relative_to(base: &Path, target: &Path) -> PathBuf {
    let base_components: Vec<_> = base.components().collect();
    let target_components: Vec<_> = target.components().collect();
    let common = base_components
        .iter()
        .zip(&target_components)
        .take_while(|(a, b)| a == b)
        .count();
    if common == 0 {
        return target.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..base_components.len() {
        out.push("..");
    }
    for c in &target_components[common..] {
        out.push(c);
    }
    out
}

/// World-space sample clouds for every instance in a manifest. Meshes load
/// relative to `base_dir`; each instance is sampled with a seed derived from
/// `seed` and its id, so the result is independent of traversal order.
pub fn manifest_instance_clouds(
    manifest: &SceneManifest,
    base_dir: &Path,
    samples: usize,
    seed: u64,
) -> Result<Vec<PointCloud>, ManifestError> {
    let scene = manifest.to_scene();
    let mut clouds = Vec::with_capacity(scene.instances.len());
    for (id, placed) in scene.instances.iter().enumerate() {
        let mesh_path = resolve_path(base_dir, &placed.spec.mesh_path);
        let mesh = read_obj(&mesh_path)
            .map_err(|e| ManifestError::Validation(format!("instance {id}: {e}")))?;
        let transform = instance_world_transform(&mesh, placed)
            .map_err(|e| ManifestError::Validation(format!("instance {id}: {e}")))?;
        let cloud = mesh
            .sample_surface(samples, seed ^ ((id as u64) << 17))
            .map_err(|e| ManifestError::Validation(format!("instance {id}: {e}")))?;
        clouds.push(cloud.transformed(&transform));
    }
    Ok(clouds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{synthesize_scene, Asset, AssetCatalog, SynthConfig};
    use nalgebra::Vector3;

    fn test_catalog() -> AssetCatalog {
        let cube = TriangleMesh::unit_cube();
        let squash = |sx: f64, sy: f64, sz: f64| {
            TriangleMesh::new(
                cube.vertices()
                    .iter()
                    .map(|v| Vector3::new(v.x * sx, v.y * sy, v.z * sz))
                    .collect(),
                cube.faces().to_vec(),
            )
            .unwrap()
        };
        AssetCatalog {
            objects: vec![
                Asset {
                    path: "a.obj".into(),
                    mesh: squash(0.3, 0.4, 0.2),
                },
                Asset {
                    path: "b.obj".into(),
                    mesh: squash(0.5, 0.2, 0.5),
                },
            ],
            table: Some(Asset {
                path: "table.obj".into(),
                mesh: squash(1.0, 0.5, 0.7),
            }),
        }
    }

    fn sample_manifest(seed: u64) -> SceneManifest {
        let catalog = test_catalog();
        let synth = synthesize_scene(&catalog, &SynthConfig::default(), seed).unwrap();
        SceneManifest::from_scene(&synth.scene, |p| catalog.resolve(p)).unwrap()
    }

    #[test]
    fn save_load_is_structurally_equal() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = test_catalog();
        for (name, asset) in [("a.obj", &catalog.objects[0]), ("b.obj", &catalog.objects[1])] {
            crate::io::write_obj(dir.path().join(name), &asset.mesh).unwrap();
        }
        crate::io::write_obj(
            dir.path().join("table.obj"),
            &catalog.table.as_ref().unwrap().mesh,
        )
        .unwrap();

        let manifest = sample_manifest(11);
        let path = dir.path().join("scene.json");
        save_manifest(&path, &manifest).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(manifest, loaded);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = test_catalog();
        crate::io::write_obj(dir.path().join("a.obj"), &catalog.objects[0].mesh).unwrap();
        crate::io::write_obj(dir.path().join("b.obj"), &catalog.objects[1].mesh).unwrap();
        crate::io::write_obj(
            dir.path().join("table.obj"),
            &catalog.table.as_ref().unwrap().mesh,
        )
        .unwrap();

        let manifest = sample_manifest(23);
        let p1 = dir.path().join("one.json");
        let p2 = dir.path().join("two.json");
        save_manifest(&p1, &manifest).unwrap();
        let loaded = load_manifest(&p1).unwrap();
        save_manifest(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = sample_manifest(3);
        crate::io::write_obj(dir.path().join("a.obj"), &test_catalog().objects[0].mesh).unwrap();
        crate::io::write_obj(dir.path().join("b.obj"), &test_catalog().objects[1].mesh).unwrap();
        crate::io::write_obj(
            dir.path().join("table.obj"),
            &test_catalog().table.unwrap().mesh,
        )
        .unwrap();
        for inst in &mut manifest.instances {
            inst.id = 0;
        }
        let path = dir.path().join("dup.json");
        save_manifest(&path, &manifest).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, ManifestError::Validation(msg) if msg.contains("duplicate")));
    }

    #[test]
    fn missing_mesh_error_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = sample_manifest(5);
        let path = dir.path().join("missing.json");
        save_manifest(&path, &manifest).unwrap();
        let err = load_manifest(&path).unwrap_err();
        match err {
            ManifestError::Validation(msg) => {
                assert!(
                    msg.contains(".obj"),
                    "error should name the offending mesh path: {msg}"
                )
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = sample_manifest(7);
        manifest.schema_version = 99;
        let path = dir.path().join("v99.json");
        save_manifest(&path, &manifest).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(ManifestError::Version { found: 99 })
        ));
    }

    #[test]
    fn parse_error_has_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        fs::write(&path, "{\"schema_version\": 1,\n  broken\n}").unwrap();
        match load_manifest(&path).unwrap_err() {
            ManifestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn q9_is_idempotent() {
        for x in [0.1, -3.25e-7, 123456.789, 0.0, -0.0, 1.0 / 3.0] {
            let once = q9(x);
            assert_eq!(q9(once), once);
            assert_eq!(format!("{:.8e}", q9(x)), format!("{:.8e}", once));
        }
    }

    #[test]
    fn relative_path_helper() {
        let base = Path::new("/data/scenes/out");
        let target = Path::new("/data/assets/mesh.obj");
        assert_eq!(
            relative_to(base, target),
            PathBuf::from("../../assets/mesh.obj")
        );
    }

    #[test]
    fn manifest_round_trips_scene_fields() {
        let catalog = test_catalog();
        let synth = synthesize_scene(&catalog, &SynthConfig::default(), 31).unwrap();
        let manifest = SceneManifest::from_scene(&synth.scene, |p| catalog.resolve(p)).unwrap();
        let rebuilt = manifest.to_scene();
        assert_eq!(rebuilt.instances.len(), synth.scene.instances.len());
        assert_eq!(rebuilt.relations, synth.scene.relations);
        assert_eq!(rebuilt.rng_seed, synth.scene.rng_seed);
        for (a, b) in rebuilt.instances.iter().zip(&synth.scene.instances) {
            assert_eq!(a.spec.mesh_path, b.spec.mesh_path);
            assert_eq!(a.stacked_on, b.stacked_on);
            assert!((a.center - b.center).norm() < 1e-7);
            assert!((a.yaw - b.yaw).abs() < 1e-7);
        }
    }
}
