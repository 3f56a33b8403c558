//! Collision-free random scene layout.
//!
//! Objects are discs on the x/z ground plane (y is up). A variable-radius
//! Poisson-disk pass places larger discs first; a table, when present, goes
//! first and joins the same exclusion process. One object can then be
//! stacked on the table top.

mod poisson;
mod synth;
mod table;

pub use poisson::{
    poisson_place, poisson_place_audited, poisson_place_constrained, CandidateRecord,
};
pub use synth::{synthesize_scene, Asset, AssetCatalog, SynthConfig, SynthesizedScene};
pub use table::{slice_table_top, stack_on_table, TableTop};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{GeomError, SimilarityTransform, TriangleMesh};

/// Region growth factor applied when a placement budget runs out.
pub const REGION_GROWTH: f64 = 1.1;
/// Hard cap on region expansions before giving up.
pub const MAX_EXPANSIONS: usize = 8;
/// Scene size bounds.
pub const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 12;
/// Default per-object candidate budget.
pub const DEFAULT_RETRY_BUDGET: usize = 64;
/// Fraction of the centroid-to-edge distance a stacked object may fill.
pub const STACK_MARGIN: f64 = 0.9;
/// Smallest effective radius worth stacking.
pub const MIN_STACK_RADIUS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("operation requires a non-empty input")]
    EmptyInput,
    #[error("degenerate extent: footprint has zero x/z size")]
    DegenerateExtent,
    #[error("scene must have between {MIN_OBJECTS} and {MAX_OBJECTS} objects, got {got}")]
    InvalidSceneSize { got: usize },
    #[error("could not place object {spec_index} after {expansions} region expansions")]
    PlacementFailed {
        placed: Vec<PlacedInstance>,
        spec_index: usize,
        expansions: usize,
    },
    #[error("table slice failed: {0}")]
    SliceFailed(String),
    #[error("stacking failed: {0}")]
    StackFailed(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// Placement-relevant description of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub mesh_path: String,
    /// Footprint disc radius at unit scale, from the mesh x/z extents.
    pub base_radius: f64,
    pub scale: f64,
    pub is_table: bool,
}

impl InstanceSpec {
    pub fn effective_radius(&self) -> f64 {
        self.scale * self.base_radius
    }
}

/// A spec with a resolved ground position, yaw and (for stacked objects)
/// support height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedInstance {
    pub spec: InstanceSpec,
    /// Ground-plane position (x, z).
    pub center: Vector2<f64>,
    /// Bottom height; 0 on the ground, the table-top height when stacked.
    pub height: f64,
    pub yaw: f64,
    pub effective_radius: f64,
    pub stacked_on: Option<usize>,
}

impl PlacedInstance {
    pub fn center3(&self) -> Vector3<f64> {
        Vector3::new(self.center.x, self.height, self.center.y)
    }
}

/// Axis-aligned sampling rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Rect {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Rect {
        Rect { min, max }
    }

    pub fn centered_square(half: f64) -> Rect {
        Rect {
            min: Vector2::new(-half, -half),
            max: Vector2::new(half, half),
        }
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) * 0.5
    }

    /// Grow about the center by `factor` per side.
    pub fn expanded(&self, factor: f64) -> Rect {
        let c = self.center();
        let half = (self.max - self.min) * 0.5 * factor;
        Rect {
            min: c - half,
            max: c + half,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialRelation {
    Right,
    Left,
    Front,
    Back,
    OnTopOf,
}

/// A full generated layout plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutScene {
    pub instances: Vec<PlacedInstance>,
    pub gap: f64,
    pub region: Rect,
    pub relations: Vec<(usize, usize, SpatialRelation)>,
    pub rng_seed: u64,
    pub expansions: usize,
}

/// `scale x half the x/z AABB diagonal`: a disc that contains the footprint
/// under any yaw.
pub fn footprint_radius(mesh: &TriangleMesh, scale: f64) -> Result<f64, LayoutError> {
    if mesh.is_empty() {
        return Err(LayoutError::EmptyInput);
    }
    let aabb = mesh.aabb()?;
    let e = aabb.extents();
    let base = 0.5 * (e.x * e.x + e.z * e.z).sqrt();
    if base == 0.0 {
        return Err(LayoutError::DegenerateExtent);
    }
    Ok(scale * base)
}

/// Global clearance: mean radius times the density factor.
pub fn compute_gap(radii: &[f64], density_factor: f64) -> Result<f64, LayoutError> {
    if radii.is_empty() {
        return Err(LayoutError::EmptyInput);
    }
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    Ok(mean * density_factor)
}

/// Dominant-axis relation per instance pair: +x is right, -x left, +z front,
/// -z back; stacking wins outright. Emitted as `(subject, reference, kind)`
/// with the higher-id instance as subject, pairs in lexicographic order.
pub fn tag_relations(scene: &LayoutScene) -> Vec<(usize, usize, SpatialRelation)> {
    let mut out = Vec::new();
    let n = scene.instances.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if scene.instances[j].stacked_on == Some(i) {
                out.push((j, i, SpatialRelation::OnTopOf));
                continue;
            }
            if scene.instances[i].stacked_on == Some(j) {
                out.push((i, j, SpatialRelation::OnTopOf));
                continue;
            }
            let d = scene.instances[j].center - scene.instances[i].center;
            let kind = if d.x.abs() >= d.y.abs() {
                if d.x > 0.0 {
                    SpatialRelation::Right
                } else {
                    SpatialRelation::Left
                }
            } else if d.y > 0.0 {
                SpatialRelation::Front
            } else {
                SpatialRelation::Back
            };
            out.push((j, i, kind));
        }
    }
    out
}

/// World transform realizing a placed instance: scale, yaw about +y, then
/// translate so the mesh's x/z footprint center sits at the instance center
/// and the mesh bottom sits at the instance height.
pub fn instance_world_transform(
    mesh: &TriangleMesh,
    placed: &PlacedInstance,
) -> Result<SimilarityTransform, LayoutError> {
    let aabb = mesh.aabb()?;
    let anchor = Vector3::new(
        (aabb.min.x + aabb.max.x) * 0.5,
        aabb.min.y,
        (aabb.min.z + aabb.max.z) * 0.5,
    );
    let rot = SimilarityTransform::from_axis_yaw(1, placed.yaw);
    let s = placed.spec.scale;
    let translation = placed.center3() - s * (rot.rotation() * anchor);
    Ok(SimilarityTransform::from_parts_unchecked(
        *rot.rotation(),
        translation,
        s,
    ))
}
