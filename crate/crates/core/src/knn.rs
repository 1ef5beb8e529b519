//! Exact brute-force nearest neighbors over 3D points.

use rayon::prelude::*;

use crate::splat::linalg::Vec3;

fn dist2(a: Vec3, b: Vec3) -> f32 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// The `k` nearest points to `points[query]`, excluding itself, nearest
/// first with ties broken by index. Returns fewer when `points` is small.
pub fn k_nearest(points: &[Vec3], query: usize, k: usize) -> Vec<usize> {
    let q = points[query];
    let mut d: Vec<(f32, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(i, &p)| (dist2(p, q), i))
        .collect();
    let cmp = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

pub fn k_nearest_many(points: &[Vec3], queries: &[usize], k: usize) -> Vec<Vec<usize>> {
    queries.par_iter().map(|&q| k_nearest(points, q, k)).collect()
}

/// Mean Euclidean distance from each point to its `k` nearest neighbors.
pub fn mean_neighbor_distances(points: &[Vec3], k: usize) -> Vec<f32> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nn = k_nearest(points, i, k);
            if nn.is_empty() {
                return 0.0;
            }
            nn.iter().map(|&j| dist2(points[i], points[j]).sqrt()).sum::<f32>() / nn.len() as f32
        })
        .collect()
}
