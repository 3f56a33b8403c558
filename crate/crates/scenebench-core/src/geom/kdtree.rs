use nalgebra::Vector3;

use super::{euclid_sq, GeomError, PointCloud};

/// Static 3D k-d tree over a borrowed-by-value point set.
///
/// Queries return exactly what an index-ordered brute-force scan would:
/// candidates are ranked by `(squared distance, reference index)`, so ties
/// always resolve to the lowest index. Pruning is strict (`>` rather than
/// `>=`) to keep equal-distance subtrees reachable.
pub struct KdTree3 {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist_sq: f64,
    index: usize,
}

impl Candidate {
    const WORST: Candidate = Candidate {
        dist_sq: f64::INFINITY,
        index: usize::MAX,
    };

    #[inline]
    fn better_than(&self, other: &Candidate) -> bool {
        self.dist_sq < other.dist_sq
            || (self.dist_sq == other.dist_sq && self.index < other.index)
    }
}

impl KdTree3 {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let points = points.to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&points, &mut order, 0, &mut nodes);
        Self {
            points,
            nodes,
            root,
        }
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::build(cloud.points())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(
        points: &[Vector3<f64>],
        order: &mut [usize],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> Option<usize> {
        if order.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = order.len() / 2;
        // Deterministic split: coordinate first, original index to break ties.
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let point = order[mid];
        let slot = nodes.len();
        nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, hi, depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        Some(slot)
    }

    /// Index and Euclidean distance of the nearest point, ties to the lowest
    /// index. `None` only for an empty tree.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        let root = self.root?;
        let mut best = Candidate::WORST;
        self.nearest_rec(root, query, &mut best);
        Some((best.index, best.dist_sq.sqrt()))
    }

    fn nearest_rec(&self, node_idx: usize, query: &Vector3<f64>, best: &mut Candidate) {
        let node = &self.nodes[node_idx];
        let cand = Candidate {
            dist_sq: euclid_sq(query, &self.points[node.point]),
            index: node.point,
        };
        if cand.better_than(best) {
            *best = cand;
        }
        let delta = query[node.axis] - self.points[node.point][node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.nearest_rec(n, query, best);
        }
        // Visit the far side unless the splitting plane is strictly farther
        // than the current best; equality may still hide a lower index.
        if let Some(f) = far {
            if delta * delta <= best.dist_sq {
                self.nearest_rec(f, query, best);
            }
        }
    }

    /// The `k` nearest points sorted by `(distance, index)`.
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<Candidate> = Vec::with_capacity(k);
        if let Some(root) = self.root {
            self.k_nearest_rec(root, query, k, &mut heap);
        }
        heap.sort_by(|a, b| {
            a.dist_sq
                .partial_cmp(&b.dist_sq)
                .unwrap()
                .then(a.index.cmp(&b.index))
        });
        heap.into_iter()
            .map(|c| (c.index, c.dist_sq.sqrt()))
            .collect()
    }

    fn k_nearest_rec(
        &self,
        node_idx: usize,
        query: &Vector3<f64>,
        k: usize,
        heap: &mut Vec<Candidate>,
    ) {
        let node = &self.nodes[node_idx];
        let cand = Candidate {
            dist_sq: euclid_sq(query, &self.points[node.point]),
            index: node.point,
        };
        Self::offer(heap, k, cand);
        let delta = query[node.axis] - self.points[node.point][node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.k_nearest_rec(n, query, k, heap);
        }
        if let Some(f) = far {
            let worst = Self::current_worst(heap, k);
            if delta * delta <= worst {
                self.k_nearest_rec(f, query, k, heap);
            }
        }
    }

    #[inline]
    fn current_worst(heap: &[Candidate], k: usize) -> f64 {
        if heap.len() < k {
            f64::INFINITY
        } else {
            heap.iter()
                .map(|c| c.dist_sq)
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }

    fn offer(heap: &mut Vec<Candidate>, k: usize, cand: Candidate) {
        if heap.len() < k {
            heap.push(cand);
            return;
        }
        // Replace the worst (largest dist, then largest index) if beaten.
        let mut worst = 0;
        for (i, c) in heap.iter().enumerate() {
            if heap[worst].better_than(c) {
                worst = i;
            }
        }
        if cand.better_than(&heap[worst]) {
            heap[worst] = cand;
        }
    }
}

/// Exact nearest reference point for every query point.
pub fn nearest_neighbors(
    query: &PointCloud,
    reference: &PointCloud,
) -> Result<Vec<(usize, f64)>, GeomError> {
    if reference.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let tree = KdTree3::from_cloud(reference);
    Ok(query
        .points()
        .iter()
        .map(|q| tree.nearest(q).unwrap())
        .collect())
}
