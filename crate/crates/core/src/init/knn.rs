//! Exact k-nearest-neighbour distances through a uniform grid hash.

use std::collections::HashMap;

type Cell = (i64, i64, i64);

struct Grid {
    cell: f64,
    origin: [f64; 3],
    buckets: HashMap<Cell, Vec<u32>>,
}

impl Grid {
    fn new(points: &[[f64; 3]], k: usize) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(0.0)).collect();
        let max_extent = extent.iter().cloned().fold(0.0, f64::max);
        // Aim for roughly k+1 points per occupied cell on a surface-like cloud.
        let n = points.len() as f64;
        let area = extent[0] * extent[1] + extent[1] * extent[2] + extent[0] * extent[2];
        let mut cell = (area * (k as f64 + 1.0) / n).sqrt();
        if !(cell.is_finite() && cell > 0.0) {
            cell = if max_extent > 0.0 { max_extent } else { 1.0 };
        }
        let mut grid = Self {
            cell,
            origin: lo,
            buckets: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            grid.buckets
                .entry(grid.cell_of(p))
                .or_default()
                .push(i as u32);
        }
        grid
    }

    fn cell_of(&self, p: &[f64; 3]) -> Cell {
        let c = |a: usize| ((p[a] - self.origin[a]) / self.cell).floor() as i64;
        (c(0), c(1), c(2))
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Inserts `d` into the ascending list `best`, keeping at most `k` entries.
fn push_best(best: &mut Vec<f64>, d: f64, k: usize) {
    if best.len() == k && d >= best[k - 1] {
        return;
    }
    let pos = best.partition_point(|&b| b <= d);
    best.insert(pos, d);
    best.truncate(k);
}

/// Distances to the `k` nearest other points of every point, ascending.
/// Requires `points.len() > k`.
pub fn knn_distances(points: &[[f64; 3]], k: usize) -> Vec<Vec<f64>> {
    assert!(k >= 1 && points.len() > k, "need more than k points");
    let grid = Grid::new(points, k);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (cx, cy, cz) = grid.cell_of(p);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let mut ring: i64 = 0;
            loop {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            let Some(bucket) = grid.buckets.get(&(cx + dx, cy + dy, cz + dz))
                            else {
                                continue;
                            };
                            for &j in bucket {
                                if j as usize != i {
                                    push_best(&mut best, dist(p, &points[j as usize]), k);
                                }
                            }
                        }
                    }
                }
                // Anything beyond this ring is at least `ring * cell` away.
                if best.len() == k && best[k - 1] <= ring as f64 * grid.cell {
                    break;
                }
                ring += 1;
            }
            best
        })
        .collect()
}

/// Mean of the `k` nearest-neighbour distances of every point.
pub fn knn_mean_distance(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    knn_distances(points, k)
        .into_iter()
        .map(|d| d.iter().sum::<f64>() / k as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[[f64; 3]], k: usize) -> Vec<Vec<f64>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| dist(p, q))
                    .collect();
                d.sort_by(f64::total_cmp);
                d.truncate(k);
                d
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_varied_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, spread) in [(5, 1.0), (50, 0.01), (400, 10.0), (2000, 3.0)] {
            let mut pts: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    let s: f64 = rng.random_range(0.0..1.0);
                    // Mix of a dense cluster and sparse outliers.
                    let r = if s < 0.8 { spread * 0.05 } else { spread };
                    std::array::from_fn(|_| rng.random_range(-r..r))
                })
                .collect();
            pts.push(pts[0]);
            assert_eq!(knn_distances(&pts, 3), brute(&pts, 3), "n={n}");
        }
    }

    #[test]
    fn planar_cloud() {
        let pts: Vec<[f64; 3]> = (0..30)
            .flat_map(|i| (0..30).map(move |j| [i as f64 * 0.1, j as f64 * 0.1, 0.0]))
            .collect();
        assert_eq!(knn_distances(&pts, 3), brute(&pts, 3));
        assert!((knn_mean_distance(&pts, 3)[2 * 30 + 1] - 0.1).abs() < 1e-12);
    }
}
