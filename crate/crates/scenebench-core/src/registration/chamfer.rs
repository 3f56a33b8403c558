use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::IcpError;
use crate::geom::{KdTree3, PointCloud};

/// Symmetric Chamfer distance with per-direction trimming: both clouds are
/// subsampled to at most `sample_cap` points (seeded), nearest-neighbor
/// distances are computed in both directions, the largest
/// `ceil(trim_ratio * n)` distances of each direction are discarded, and the
/// mean of everything retained is returned.
pub fn trimmed_symmetric_chamfer(
    a: &PointCloud,
    b: &PointCloud,
    trim_ratio: f64,
    sample_cap: usize,
    rng_seed: u64,
) -> Result<f64, IcpError> {
    if a.is_empty() || b.is_empty() {
        return Err(IcpError::EmptyInput);
    }
    if !(0.0..1.0).contains(&trim_ratio) {
        return Err(IcpError::InvalidConfig(format!(
            "trim ratio {trim_ratio} outside [0, 1)"
        )));
    }
    if sample_cap == 0 {
        return Err(IcpError::InvalidConfig("sample cap must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sa = subsample(a.points(), sample_cap, &mut rng);
    let sb = subsample(b.points(), sample_cap, &mut rng);

    let tree_a = KdTree3::build(&sa);
    let tree_b = KdTree3::build(&sb);
    let mut total = 0.0;
    let mut count = 0usize;
    for (pts, tree) in [(&sa, &tree_b), (&sb, &tree_a)] {
        let mut dists: Vec<f64> = pts.iter().map(|p| tree.nearest(p).unwrap().1).collect();
        dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let drop = (trim_ratio * dists.len() as f64).ceil() as usize;
        let keep = dists.len() - drop.min(dists.len());
        total += dists[..keep].iter().sum::<f64>();
        count += keep;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

fn subsample(points: &[Vector3<f64>], cap: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let mut indices: Vec<usize> = rand::seq::index::sample(rng, points.len(), cap).into_vec();
    indices.sort_unstable();
    indices.into_iter().map(|i| points[i]).collect()
}
