use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    InstanceSpec, LayoutError, LayoutScene, PlacedInstance, Rect, SpatialRelation,
    MAX_EXPANSIONS, MAX_OBJECTS, MIN_OBJECTS, REGION_GROWTH,
};

/// One candidate draw and the decision that was made for it. Replaying the
/// records against an all-pairs check must reproduce the same decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateRecord {
    pub spec_index: usize,
    pub center: Vector2<f64>,
    pub radius: f64,
    pub accepted: bool,
}

/// Uniform grid over ground positions. Cell size is fixed at construction;
/// each placed disc is filed under the cell containing its center.
struct ExclusionGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl ExclusionGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: &Vector2<f64>) -> (i64, i64) {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, index: usize, p: &Vector2<f64>) {
        self.buckets.entry(self.key(p)).or_default().push(index);
    }

    /// Indices of placed discs whose centers can possibly lie within `reach`
    /// of `p` (conservative: scans ceil(reach/cell) rings of cells).
    fn candidates_within(&self, p: &Vector2<f64>, reach: f64) -> Vec<usize> {
        let (cx, cy) = self.key(p);
        let r = (reach / self.cell).ceil() as i64;
        let mut out = Vec::new();
        for gx in (cx - r)..=(cx + r) {
            for gy in (cy - r)..=(cy + r) {
                if let Some(bucket) = self.buckets.get(&(gx, gy)) {
                    out.extend_from_slice(bucket);
                }
            }
        }
        out
    }
}

/// Place every spec as a disc on the ground, larger radii first (table
/// first), such that `|x_i - x_j| >= r_i + r_j + gap` for all placed pairs.
/// Rejection checks run on a uniform grid of cell size `(min r + gap)/sqrt(2)`;
/// when an object exhausts `retry_budget` candidates the region grows by 10%
/// and sampling resumes, up to [`MAX_EXPANSIONS`] growths in total.
pub fn poisson_place(
    specs: &[InstanceSpec],
    region: Rect,
    gap: f64,
    retry_budget: usize,
    rng_seed: u64,
) -> Result<LayoutScene, LayoutError> {
    poisson_place_audited(specs, region, gap, retry_budget, rng_seed).map(|(scene, _)| scene)
}

/// [`poisson_place`] that additionally requires every object (after the
/// first non-table placement) to stand in the given dominant-axis relation
/// to the previously placed object. Placement stays collision-free; the
/// constraint only filters candidates.
pub fn poisson_place_constrained(
    specs: &[InstanceSpec],
    region: Rect,
    gap: f64,
    retry_budget: usize,
    rng_seed: u64,
    relation: SpatialRelation,
) -> Result<LayoutScene, LayoutError> {
    if relation == SpatialRelation::OnTopOf {
        return Err(LayoutError::StackFailed(
            "on_top_of cannot constrain ground placement".into(),
        ));
    }
    place_impl(specs, region, gap, retry_budget, rng_seed, Some(relation))
        .map(|(scene, _)| scene)
}

/// [`poisson_place`] that also returns the full candidate audit trail.
pub fn poisson_place_audited(
    specs: &[InstanceSpec],
    region: Rect,
    gap: f64,
    retry_budget: usize,
    rng_seed: u64,
) -> Result<(LayoutScene, Vec<CandidateRecord>), LayoutError> {
    place_impl(specs, region, gap, retry_budget, rng_seed, None)
}

fn dominant_relation(delta: Vector2<f64>) -> SpatialRelation {
    if delta.x.abs() >= delta.y.abs() {
        if delta.x > 0.0 {
            SpatialRelation::Right
        } else {
            SpatialRelation::Left
        }
    } else if delta.y > 0.0 {
        SpatialRelation::Front
    } else {
        SpatialRelation::Back
    }
}

fn place_impl(
    specs: &[InstanceSpec],
    region: Rect,
    gap: f64,
    retry_budget: usize,
    rng_seed: u64,
    relation: Option<SpatialRelation>,
) -> Result<(LayoutScene, Vec<CandidateRecord>), LayoutError> {
    if specs.len() < MIN_OBJECTS || specs.len() > MAX_OBJECTS {
        return Err(LayoutError::InvalidSceneSize { got: specs.len() });
    }

    // Table first, then descending effective radius; original index breaks
    // ties so the order is total.
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&specs[a], &specs[b]);
        sb.is_table
            .cmp(&sa.is_table)
            .then(
                sb.effective_radius()
                    .partial_cmp(&sa.effective_radius())
                    .unwrap(),
            )
            .then(a.cmp(&b))
    });

    let min_radius = order
        .iter()
        .map(|&i| specs[i].effective_radius())
        .fold(f64::INFINITY, f64::min);
    let mut grid = ExclusionGrid::new((min_radius + gap) / SQRT_2);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut current_region = region;
    let mut expansions = 0usize;
    let mut audit = Vec::new();

    // Placement slots in the original spec order; the loop fills them in
    // descending-radius order.
    let mut placed: Vec<Option<PlacedInstance>> = vec![None; specs.len()];
    let mut placed_order: Vec<usize> = Vec::new();
    let mut max_placed_radius = 0.0f64;
    let mut prev_center: Option<Vector2<f64>> = None;

    for &spec_index in &order {
        let spec = &specs[spec_index];
        let radius = spec.effective_radius();
        loop {
            let mut accepted_center = None;
            for _ in 0..retry_budget {
                let candidate = Vector2::new(
                    rng.random_range(current_region.min.x..=current_region.max.x),
                    rng.random_range(current_region.min.y..=current_region.max.y),
                );
                let reach = radius + max_placed_radius + gap;
                let collision_free = grid
                    .candidates_within(&candidate, reach)
                    .iter()
                    .all(|&j| {
                        let other = placed[j].as_ref().unwrap();
                        (candidate - other.center).norm()
                            >= radius + other.effective_radius + gap
                    });
                let relation_ok = match (relation, prev_center) {
                    (Some(kind), Some(prev)) => dominant_relation(candidate - prev) == kind,
                    _ => true,
                };
                let ok = collision_free && relation_ok;
                audit.push(CandidateRecord {
                    spec_index,
                    center: candidate,
                    radius,
                    accepted: ok,
                });
                if ok {
                    accepted_center = Some(candidate);
                    break;
                }
            }
            match accepted_center {
                Some(center) => {
                    let yaw = rng.random_range(0.0..(2.0 * PI));
                    grid.insert(spec_index, &center);
                    placed[spec_index] = Some(PlacedInstance {
                        spec: spec.clone(),
                        center,
                        height: 0.0,
                        yaw,
                        effective_radius: radius,
                        stacked_on: None,
                    });
                    placed_order.push(spec_index);
                    max_placed_radius = max_placed_radius.max(radius);
                    prev_center = Some(center);
                    break;
                }
                None => {
                    expansions += 1;
                    if expansions > MAX_EXPANSIONS {
                        return Err(LayoutError::PlacementFailed {
                            placed: placed.into_iter().flatten().collect(),
                            spec_index,
                            expansions: expansions - 1,
                        });
                    }
                    current_region = current_region.expanded(REGION_GROWTH);
                }
            }
        }
    }

    let instances: Vec<PlacedInstance> = placed.into_iter().map(Option::unwrap).collect();
    let mut scene = LayoutScene {
        instances,
        gap,
        region: current_region,
        relations: Vec::new(),
        rng_seed,
        expansions,
    };
    scene.relations = super::tag_relations(&scene);
    Ok((scene, audit))
}
