//! Lloyd's k-means with k-means++ seeding.
//!
//! Assignment steps run in parallel over points; centroid sums are reduced
//! sequentially in point order so results are bit-stable for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::VectorDataset;
use crate::distance::squared_l2;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeans {
    pub dim: usize,
    /// `k * dim` row-major centroid coordinates.
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Sum of squared distances from each point to its assigned centroid.
    pub fn objective(&self, data: &VectorDataset) -> f64 {
        data.rows()
            .zip(&self.assignments)
            .map(|(row, &a)| squared_l2(row, self.centroid(a as usize)) as f64)
            .sum()
    }
}

/// Index and squared distance of the nearest centroid; ties go to the lower index.
#[inline]
pub fn nearest_centroid(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_l2(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign_all(data: &VectorDataset, centroids: &[f32]) -> Vec<(u32, f32)> {
    let dim = data.dim();
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (c, d) = nearest_centroid(data.row(i as u32), centroids, dim);
            (c as u32, d)
        })
        .collect()
}

fn plus_plus_seed(data: &VectorDataset, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len();
    let dim = data.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(data.row(first as u32));
    let mut nearest_sq: Vec<f64> = data
        .rows()
        .map(|r| squared_l2(r, &centroids[..dim]) as f64)
        .collect();
    for _ in 1..k {
        let total: f64 = nearest_sq.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in nearest_sq.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final partial sum
            chosen.unwrap_or_else(|| nearest_sq.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = data.row(pick as u32).to_vec();
        for (i, row) in data.rows().enumerate() {
            let d = squared_l2(row, &c) as f64;
            if d < nearest_sq[i] {
                nearest_sq[i] = d;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Recomputes centroids as member means, re-seeding empty clusters from the
/// farthest member of the currently largest cluster.
fn update_centroids(
    data: &VectorDataset,
    k: usize,
    assigned: &mut [(u32, f32)],
    centroids: &mut [f32],
) {
    let dim = data.dim();
    let mut counts = vec![0usize; k];
    for &(c, _) in assigned.iter() {
        counts[c as usize] += 1;
    }
    for empty in 0..k {
        if counts[empty] != 0 {
            continue;
        }
        let largest = (0..k)
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .unwrap();
        if counts[largest] <= 1 {
            continue;
        }
        let mut far = None::<(usize, f32)>;
        for (i, &(c, d)) in assigned.iter().enumerate() {
            if c as usize == largest && far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let (idx, _) = far.unwrap();
        assigned[idx] = (empty as u32, 0.0);
        counts[largest] -= 1;
        counts[empty] = 1;
    }
    let mut sums = vec![0.0f64; k * dim];
    for (row, &(c, _)) in data.rows().zip(assigned.iter()) {
        let s = &mut sums[c as usize * dim..(c as usize + 1) * dim];
        for (acc, &x) in s.iter_mut().zip(row) {
            *acc += x as f64;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for j in 0..dim {
            centroids[c * dim + j] = (sums[c * dim + j] * inv) as f32;
        }
    }
}

/// Clusters `data` into `k` groups with at most `max_iters` Lloyd updates,
/// stopping early once no assignment changes.
pub fn kmeans(data: &VectorDataset, k: usize, max_iters: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > data.len() {
        return Err(Error::invalid(format!(
            "k={k} exceeds the {} available points",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(data, k, &mut rng);
    let mut assigned = assign_all(data, &centroids);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        update_centroids(data, k, &mut assigned, &mut centroids);
        let next = assign_all(data, &centroids);
        let unchanged = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = next;
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(KMeans {
        dim: data.dim(),
        centroids,
        assignments: assigned.into_iter().map(|(c, _)| c).collect(),
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::clustered_with_centers;

    #[test]
    fn single_cluster_is_mean() {
        let ds =
            VectorDataset::from_rows(&[[0.0, 0.0], [2.0, 0.0], [1.0, 3.0], [1.0, 1.0]]).unwrap();
        let km = kmeans(&ds, 1, 10, 3).unwrap();
        assert_eq!(km.centroid(0), &[1.0, 1.0]);
    }

    #[test]
    fn distinct_points_recovered_exactly() {
        let rows = [[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0], [7.0, 7.0], [0.5, -4.0]];
        let ds = VectorDataset::from_rows(&rows).unwrap();
        let km = kmeans(&ds, 5, 10, 11).unwrap();
        assert_eq!(km.objective(&ds), 0.0);
        let mut got: Vec<Vec<f32>> = (0..5).map(|i| km.centroid(i).to_vec()).collect();
        let mut want: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn duplicate_points_do_not_hang() {
        let ds = VectorDataset::from_rows(&[[1.0], [1.0], [1.0], [2.0]]).unwrap();
        let km = kmeans(&ds, 3, 10, 0).unwrap();
        assert_eq!(km.k(), 3);
        assert_eq!(km.objective(&ds), 0.0);
    }

    #[test]
    fn recovers_generator_centers() {
        let spread = 0.01;
        let (ds, mix) = clustered_with_centers(1000, 8, 10, spread, 17).unwrap();
        let km = kmeans(&ds, 10, 50, 5).unwrap();
        let mut used = [false; 10];
        for c in mix.centers() {
            let (i, d) = nearest_centroid(c, &km.centroids, 8);
            assert!(d.sqrt() <= 3.0 * spread, "center missed by {}", d.sqrt());
            assert!(!used[i], "two centers share a centroid");
            used[i] = true;
        }
    }

    #[test]
    fn deterministic() {
        let (ds, _) = clustered_with_centers(500, 4, 6, 0.05, 1).unwrap();
        let a = kmeans(&ds, 6, 20, 9).unwrap();
        let b = kmeans(&ds, 6, 20, 9).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn rejects_k_above_n() {
        let ds = VectorDataset::from_rows(&[[1.0]]).unwrap();
        assert!(kmeans(&ds, 2, 1, 0).is_err());
        assert!(kmeans(&ds, 0, 1, 0).is_err());
    }
}
