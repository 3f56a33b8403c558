use std::collections::HashMap;

use nalgebra::Vector2;

use super::{InstanceSpec, LayoutError, PlacedInstance, MIN_STACK_RADIUS, STACK_MARGIN};
use crate::geom::TriangleMesh;

/// Cross-section of a table mesh near its top: the boundary polygon on the
/// ground plane, its area centroid, and the slice height.
#[derive(Debug, Clone, PartialEq)]
pub struct TableTop {
    /// Closed vertex loop (x, z), last vertex implicitly connects to first.
    pub polygon: Vec<Vector2<f64>>,
    pub centroid: Vector2<f64>,
    pub top_height: f64,
}

const WELD_SCALE: f64 = 1e9;

/// Slice `table` with the horizontal plane `y = max_y - epsilon` and return
/// the largest closed boundary loop of the cross-section.
pub fn slice_table_top(table: &TriangleMesh, epsilon: f64) -> Result<TableTop, LayoutError> {
    if table.is_empty() {
        return Err(LayoutError::EmptyInput);
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(LayoutError::SliceFailed(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let aabb = table.aabb()?;
    let h = aabb.max.y - epsilon;

    // Intersect each triangle with the plane y = h.
    let mut segments: Vec<(Vector2<f64>, Vector2<f64>)> = Vec::new();
    for face in table.faces() {
        let tri = [
            table.vertices()[face[0]],
            table.vertices()[face[1]],
            table.vertices()[face[2]],
        ];
        let mut hits: Vec<Vector2<f64>> = Vec::new();
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let (da, db) = (a.y - h, b.y - h);
            if (da > 0.0) != (db > 0.0) {
                let t = da / (da - db);
                let p = a + (b - a) * t;
                hits.push(Vector2::new(p.x, p.z));
            }
        }
        if hits.len() == 2 && (hits[0] - hits[1]).norm() > 1e-12 {
            segments.push((hits[0], hits[1]));
        }
    }
    if segments.is_empty() {
        return Err(LayoutError::SliceFailed(format!(
            "no geometry crosses the slice plane y = {h}"
        )));
    }

    let loops = chain_segments(&segments);
    let best = loops
        .into_iter()
        .filter(|l| l.len() >= 3)
        .max_by(|a, b| {
            signed_area(a)
                .abs()
                .partial_cmp(&signed_area(b).abs())
                .unwrap()
        })
        .ok_or_else(|| {
            LayoutError::SliceFailed("cross-section has no closed boundary loop".into())
        })?;

    let centroid = polygon_centroid(&best)?;
    Ok(TableTop {
        polygon: best,
        centroid,
        top_height: h,
    })
}

fn weld_key(p: &Vector2<f64>) -> (i64, i64) {
    ((p.x * WELD_SCALE).round() as i64, (p.y * WELD_SCALE).round() as i64)
}

/// Chain unordered segments into closed loops by welding endpoints.
fn chain_segments(segments: &[(Vector2<f64>, Vector2<f64>)]) -> Vec<Vec<Vector2<f64>>> {
    let mut adjacency: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(weld_key(a)).or_default().push(i);
        adjacency.entry(weld_key(b)).or_default().push(i);
    }
    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();

    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, second) = segments[start];
        let mut path = vec![first, second];
        loop {
            let tail = *path.last().unwrap();
            let tail_key = weld_key(&tail);
            let next = adjacency
                .get(&tail_key)
                .and_then(|cands| cands.iter().find(|&&i| !used[i]).copied());
            match next {
                Some(i) => {
                    used[i] = true;
                    let (a, b) = segments[i];
                    let nxt = if weld_key(&a) == tail_key { b } else { a };
                    if weld_key(&nxt) == weld_key(&path[0]) {
                        loops.push(path);
                        break;
                    }
                    path.push(nxt);
                }
                // Open chain: not a boundary loop, drop it.
                None => break,
            }
        }
    }
    // Collapse collinear runs so loop vertices are the true polygon corners.
    loops.into_iter().map(simplify_collinear).collect()
}

fn simplify_collinear(mut poly: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    if poly.len() < 3 {
        return poly;
    }
    let mut out: Vec<Vector2<f64>> = Vec::with_capacity(poly.len());
    let n = poly.len();
    for i in 0..n {
        let prev = poly[(i + n - 1) % n];
        let cur = poly[i];
        let next = poly[(i + 1) % n];
        let cross = (cur - prev).perp(&(next - cur));
        let scale = (cur - prev).norm() * (next - cur).norm();
        if cross.abs() > 1e-12 * scale.max(1e-300) {
            out.push(cur);
        }
    }
    if out.len() >= 3 {
        poly = out;
    }
    poly
}

fn signed_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        acc += a.x * b.y - b.x * a.y;
    }
    acc * 0.5
}

fn polygon_centroid(poly: &[Vector2<f64>]) -> Result<Vector2<f64>, LayoutError> {
    let area = signed_area(poly);
    if area.abs() < 1e-15 {
        return Err(LayoutError::SliceFailed(
            "cross-section polygon has zero area".into(),
        ));
    }
    let n = poly.len();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let w = a.x * b.y - b.x * a.y;
        cx += (a.x + b.x) * w;
        cy += (a.y + b.y) * w;
    }
    Ok(Vector2::new(cx, cy) / (6.0 * area))
}

fn point_in_polygon(p: &Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_squared();
    if len_sq == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len_sq).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from the centroid to the nearest polygon edge.
pub(crate) fn centroid_clearance(top: &TableTop) -> f64 {
    let n = top.polygon.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let d = point_segment_distance(
            &top.centroid,
            &top.polygon[i],
            &top.polygon[(i + 1) % n],
        );
        best = best.min(d);
    }
    best
}

/// Place `object` at the table-top centroid, shrinking its scale if needed so
/// the footprint stays within [`STACK_MARGIN`] of the centroid-to-edge
/// clearance.
pub fn stack_on_table(
    top: &TableTop,
    object: &InstanceSpec,
    table_id: usize,
) -> Result<PlacedInstance, LayoutError> {
    if top.polygon.len() < 3 {
        return Err(LayoutError::StackFailed("degenerate top polygon".into()));
    }
    if !point_in_polygon(&top.centroid, &top.polygon) {
        return Err(LayoutError::StackFailed(
            "centroid lies outside the top polygon".into(),
        ));
    }
    let allowed = centroid_clearance(top) * STACK_MARGIN;
    if allowed < MIN_STACK_RADIUS {
        return Err(LayoutError::StackFailed(format!(
            "usable radius {allowed:.2e} is below the minimum {MIN_STACK_RADIUS:.2e}"
        )));
    }
    let scale = object.scale.min(allowed / object.base_radius);
    let mut spec = object.clone();
    spec.scale = scale;
    let effective_radius = spec.effective_radius();
    Ok(PlacedInstance {
        spec,
        center: top.centroid,
        height: top.top_height,
        yaw: 0.0,
        effective_radius,
        stacked_on: Some(table_id),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use approx::assert_relative_eq;

    #[test]
    fn unit_cube_top_is_unit_square() {
        let cube = TriangleMesh::unit_cube();
        let top = slice_table_top(&cube, 0.01).unwrap();
        assert_relative_eq!(top.top_height, 0.99, epsilon = 1e-12);
        assert_relative_eq!(top.centroid.x, 0.5, epsilon = 1e-9);
        assert_relative_eq!(top.centroid.y, 0.5, epsilon = 1e-9);
        assert_relative_eq!(signed_area(&top.polygon).abs(), 1.0, epsilon = 1e-9);
        assert_eq!(top.polygon.len(), 4, "collinear weld points removed");
    }

    fn cylinder(radius: f64, height: f64, sides: usize) -> TriangleMesh {
        let mut verts = Vec::new();
        for level in 0..2 {
            let y = level as f64 * height;
            for i in 0..sides {
                let a = 2.0 * std::f64::consts::PI * i as f64 / sides as f64;
                verts.push(Vector3::new(radius * a.cos(), y, radius * a.sin()));
            }
        }
        // centers of the caps
        verts.push(Vector3::new(0.0, 0.0, 0.0));
        verts.push(Vector3::new(0.0, height, 0.0));
        let (c0, c1) = (2 * sides, 2 * sides + 1);
        let mut faces = Vec::new();
        for i in 0..sides {
            let j = (i + 1) % sides;
            faces.push([i, j, sides + i]);
            faces.push([j, sides + j, sides + i]);
            faces.push([c0, j, i]);
            faces.push([c1, sides + i, sides + j]);
        }
        TriangleMesh::new(verts, faces).unwrap()
    }

    #[test]
    fn cylinder_slice_area_close_to_disc() {
        let mesh = cylinder(0.5, 1.0, 64);
        let top = slice_table_top(&mesh, 0.01).unwrap();
        let area = signed_area(&top.polygon).abs();
        let exact = std::f64::consts::PI * 0.25;
        assert!(
            (area - exact).abs() / exact < 0.02,
            "area {area} vs {exact}"
        );
        assert!(top.centroid.norm() < 1e-9);
    }

    #[test]
    fn mesh_below_plane_fails() {
        // Slice plane sits above everything when epsilon is bigger than the
        // mesh... epsilon larger than the height puts the plane below min_y.
        let cube = TriangleMesh::unit_cube();
        assert!(matches!(
            slice_table_top(&cube, 2.0),
            Err(LayoutError::SliceFailed(_))
        ));
    }

    fn spec(base_radius: f64, scale: f64) -> InstanceSpec {
        InstanceSpec {
            mesh_path: String::new(),
            base_radius,
            scale,
            is_table: false,
        }
    }

    #[test]
    fn stacking_caps_scale_on_unit_square_top() {
        let cube = TriangleMesh::unit_cube();
        let top = slice_table_top(&cube, 0.01).unwrap();
        let placed = stack_on_table(&top, &spec(1.0, 1.0), 0).unwrap();
        // Clearance from (0.5, 0.5) to the square edge is 0.5.
        assert!(placed.spec.scale <= 0.45 + 1e-12);
        assert_relative_eq!(placed.spec.scale, 0.45, epsilon = 1e-9);
        assert_eq!(placed.stacked_on, Some(0));
        assert_relative_eq!(placed.height, 0.99, epsilon = 1e-12);
        // Effective radius stays strictly inside the polygon clearance.
        assert!(placed.effective_radius < centroid_clearance(&top));
    }

    #[test]
    fn circular_top_allows_ninety_percent_of_radius() {
        let mesh = cylinder(1.0, 1.0, 256);
        let top = slice_table_top(&mesh, 0.001).unwrap();
        let placed = stack_on_table(&top, &spec(1.0, 10.0), 3).unwrap();
        // Allowed radius = 0.9 * R (polygonized ~ slightly under 1.0).
        assert_relative_eq!(placed.effective_radius, 0.9, epsilon = 5e-3);
    }

    #[test]
    fn small_object_keeps_its_scale() {
        let cube = TriangleMesh::unit_cube();
        let top = slice_table_top(&cube, 0.01).unwrap();
        let placed = stack_on_table(&top, &spec(0.1, 1.0), 0).unwrap();
        assert_relative_eq!(placed.spec.scale, 1.0);
    }

    #[test]
    fn sliver_polygon_fails() {
        let top = TableTop {
            polygon: vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.0, 0.0001),
                Vector2::new(2.0, 0.0),
                Vector2::new(1.0, -0.0001),
            ],
            centroid: Vector2::new(1.0, 0.0),
            top_height: 1.0,
        };
        assert!(matches!(
            stack_on_table(&top, &spec(1.0, 1.0), 0),
            Err(LayoutError::StackFailed(_))
        ));
    }
}
