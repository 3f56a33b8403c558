use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    compute_gap, footprint_radius, instance_world_transform, poisson_place,
    poisson_place_constrained, slice_table_top, stack_on_table, tag_relations, InstanceSpec,
    LayoutError, LayoutScene, Rect, SpatialRelation, DEFAULT_RETRY_BUDGET, MAX_OBJECTS,
    MIN_OBJECTS,
};
use crate::geom::TriangleMesh;

/// A mesh asset addressable by path.
#[derive(Debug, Clone)]
pub struct Asset {
    pub path: String,
    pub mesh: TriangleMesh,
}

#[derive(Debug, Clone)]
pub struct AssetCatalog {
    pub objects: Vec<Asset>,
    pub table: Option<Asset>,
}

impl AssetCatalog {
    pub fn resolve(&self, path: &str) -> Option<&TriangleMesh> {
        if let Some(t) = &self.table {
            if t.path == path {
                return Some(&t.mesh);
            }
        }
        self.objects
            .iter()
            .find(|a| a.path == path)
            .map(|a| &a.mesh)
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub retry_budget: usize,
    /// Layout density factor range; the gap is mean radius x density.
    pub density_range: (f64, f64),
    /// Per-object scale range.
    pub scale_range: (f64, f64),
    /// Table-top slice depth as a fraction of the table's world height.
    pub slice_depth_fraction: f64,
    /// Fixed sampling region; `None` sizes one from the disc radii.
    pub region: Option<Rect>,
    /// When set, consecutive placements must satisfy this planar relation.
    pub relation_constraint: Option<SpatialRelation>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_objects: MIN_OBJECTS,
            max_objects: MAX_OBJECTS,
            retry_budget: DEFAULT_RETRY_BUDGET,
            density_range: (0.3, 1.0),
            scale_range: (0.5, 1.5),
            slice_depth_fraction: 0.02,
            region: None,
            relation_constraint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedScene {
    pub scene: LayoutScene,
    pub seed: u64,
}

/// Generate one collision-free scene: sample object specs from the catalog,
/// place them as discs, and when a table asset is present (and the scene has
/// room) put one object on the table top.
pub fn synthesize_scene(
    catalog: &AssetCatalog,
    config: &SynthConfig,
    seed: u64,
) -> Result<SynthesizedScene, LayoutError> {
    if catalog.objects.is_empty() {
        return Err(LayoutError::EmptyInput);
    }
    if config.min_objects < MIN_OBJECTS
        || config.max_objects > MAX_OBJECTS
        || config.min_objects > config.max_objects
    {
        return Err(LayoutError::InvalidSceneSize {
            got: config.max_objects,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(config.min_objects..=config.max_objects);
    let with_table = catalog.table.is_some() && n >= 3;

    let pick_object = |rng: &mut ChaCha8Rng| -> Result<InstanceSpec, LayoutError> {
        let idx = rng.random_range(0..catalog.objects.len());
        let asset = &catalog.objects[idx];
        let scale = rng.random_range(config.scale_range.0..=config.scale_range.1);
        Ok(InstanceSpec {
            mesh_path: asset.path.clone(),
            base_radius: footprint_radius(&asset.mesh, 1.0)?,
            scale,
            is_table: false,
        })
    };

    // Ground specs: table first (when present), then ground objects.
    let ground_count = if with_table { n - 1 } else { n };
    let mut specs: Vec<InstanceSpec> = Vec::with_capacity(ground_count);
    if with_table {
        let table = catalog.table.as_ref().unwrap();
        let scale = rng.random_range(config.scale_range.0..=config.scale_range.1);
        specs.push(InstanceSpec {
            mesh_path: table.path.clone(),
            base_radius: footprint_radius(&table.mesh, 1.0)?,
            scale,
            is_table: true,
        });
    }
    while specs.len() < ground_count {
        specs.push(pick_object(&mut rng)?);
    }
    let stacked_spec = if with_table {
        Some(pick_object(&mut rng)?)
    } else {
        None
    };

    let radii: Vec<f64> = specs.iter().map(InstanceSpec::effective_radius).collect();
    let density = rng.random_range(config.density_range.0..=config.density_range.1);
    let gap = compute_gap(&radii, density)?;
    let region = config.region.unwrap_or_else(|| {
        let span = radii.iter().map(|r| (r + gap) * (r + gap)).sum::<f64>().sqrt();
        Rect::centered_square(span * 1.25)
    });

    let placement_seed = seed ^ 0x9E3779B97F4A7C15;
    let mut scene = match config.relation_constraint {
        Some(kind) => poisson_place_constrained(
            &specs,
            region,
            gap,
            config.retry_budget,
            placement_seed,
            kind,
        )?,
        None => poisson_place(&specs, region, gap, config.retry_budget, placement_seed)?,
    };

    if let Some(spec) = stacked_spec {
        let table_mesh = &catalog.table.as_ref().unwrap().mesh;
        let table_instance = &scene.instances[0];
        let world_table =
            table_mesh.transformed(&instance_world_transform(table_mesh, table_instance)?);
        let height = world_table.aabb()?.extents().y;
        let epsilon = (height * config.slice_depth_fraction).max(1e-9);
        let top = slice_table_top(&world_table, epsilon)?;
        let mut stacked = stack_on_table(&top, &spec, 0)?;
        stacked.yaw = rng.random_range(0.0..(2.0 * std::f64::consts::PI));
        scene.instances.push(stacked);
        scene.relations = tag_relations(&scene);
    }

    scene.rng_seed = seed;
    Ok(SynthesizedScene { scene, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn box_mesh(sx: f64, sy: f64, sz: f64) -> TriangleMesh {
        let cube = TriangleMesh::unit_cube();
        let verts = cube
            .vertices()
            .iter()
            .map(|v| Vector3::new(v.x * sx, v.y * sy, v.z * sz))
            .collect();
        TriangleMesh::new(verts, cube.faces().to_vec()).unwrap()
    }

    fn catalog(with_table: bool) -> AssetCatalog {
        AssetCatalog {
            objects: vec![
                Asset {
                    path: "box_small.obj".into(),
                    mesh: box_mesh(0.2, 0.3, 0.2),
                },
                Asset {
                    path: "box_wide.obj".into(),
                    mesh: box_mesh(0.5, 0.2, 0.3),
                },
                Asset {
                    path: "box_tall.obj".into(),
                    mesh: box_mesh(0.15, 0.8, 0.15),
                },
            ],
            table: with_table.then(|| Asset {
                path: "table.obj".into(),
                mesh: box_mesh(1.2, 0.5, 0.8),
            }),
        }
    }

    #[test]
    fn scenes_are_deterministic_per_seed() {
        let cat = catalog(true);
        let cfg = SynthConfig::default();
        let a = synthesize_scene(&cat, &cfg, 42).unwrap();
        let b = synthesize_scene(&cat, &cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = synthesize_scene(&cat, &cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_size_stays_in_bounds() {
        let cat = catalog(false);
        let cfg = SynthConfig::default();
        for seed in 0..40 {
            let s = synthesize_scene(&cat, &cfg, seed).unwrap();
            let n = s.scene.instances.len();
            assert!((MIN_OBJECTS..=MAX_OBJECTS).contains(&n), "n = {n}");
        }
    }

    #[test]
    fn table_scene_has_table_first_and_one_stacked() {
        let cat = catalog(true);
        let cfg = SynthConfig {
            min_objects: 3,
            ..Default::default()
        };
        let mut saw_stack = false;
        for seed in 0..20 {
            let s = synthesize_scene(&cat, &cfg, seed).unwrap();
            assert!(s.scene.instances[0].spec.is_table);
            let stacked: Vec<_> = s
                .scene
                .instances
                .iter()
                .enumerate()
                .filter(|(_, i)| i.stacked_on.is_some())
                .collect();
            assert_eq!(stacked.len(), 1);
            let (sid, sinst) = stacked[0];
            assert_eq!(sinst.stacked_on, Some(0));
            assert!(sinst.height > 0.0, "stacked object sits on the table top");
            assert!(s
                .scene
                .relations
                .contains(&(sid, 0, super::super::SpatialRelation::OnTopOf)));
            saw_stack = true;
        }
        assert!(saw_stack);
    }

    #[test]
    fn stacked_footprint_inside_table_footprint() {
        let cat = catalog(true);
        let cfg = SynthConfig {
            min_objects: 3,
            ..Default::default()
        };
        for seed in 0..20 {
            let s = synthesize_scene(&cat, &cfg, seed).unwrap();
            let table = &s.scene.instances[0];
            let stacked = s
                .scene
                .instances
                .iter()
                .find(|i| i.stacked_on.is_some())
                .unwrap();
            let d = (stacked.center - table.center).norm();
            assert!(
                d + stacked.effective_radius < table.effective_radius,
                "stacked disc leaks out of the table disc"
            );
        }
    }
}
