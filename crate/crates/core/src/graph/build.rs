//! Vamana-style construction: random regular initialization, then passes of
//! greedy search from the medoid followed by alpha-pruning and reverse edges.
//! The first pass prunes with alpha = 1, the second with the configured alpha.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{VectorDataset, VectorId};
use crate::distance::squared_l2;
use crate::error::{Error, Result};

use super::prune::robust_prune_by;
use super::search::{beam_search_local, VisitedSet};
use super::{BuildParams, Subgraph, SubgraphBuilder};

/// Subsets up to this size get an exact medoid.
const EXACT_MEDOID_LIMIT: usize = 1000;
const MEDOID_PIVOTS: usize = 1000;

/// Scheduler weight of building a graph over `subset_size` points.
pub fn estimate_build_cost(subset_size: usize) -> u64 {
    subset_size as u64
}

/// Affine build-cost model: `fixed + slope * size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostModel {
    pub fixed: u64,
    pub slope: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { fixed: 0, slope: 1 }
    }
}

impl CostModel {
    pub fn cost(&self, subset_size: usize) -> u64 {
        self.fixed + self.slope * estimate_build_cost(subset_size)
    }
}

/// Index into `local` of the point with the smallest summed distance to a
/// pivot set: every point when `local` is small, a seeded sample otherwise.
fn medoid_local(local: &VectorDataset, seed: u64) -> u32 {
    let n = local.len();
    let pivots: Vec<u32> = if n <= EXACT_MEDOID_LIMIT {
        (0..n as u32).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_646f_6964);
        let mut p: Vec<u32> = rand::seq::index::sample(&mut rng, n, MEDOID_PIVOTS)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        p.sort_unstable();
        p
    };
    let mut best = (f64::INFINITY, 0u32);
    for i in 0..n as u32 {
        let x = local.row(i);
        let total: f64 = pivots
            .iter()
            .map(|&p| squared_l2(x, local.row(p)).sqrt() as f64)
            .sum();
        if total < best.0 {
            best = (total, i);
        }
    }
    best.1
}

/// Medoid of the given ids (exact up to 1000 members, pivot-sampled beyond).
pub fn medoid(ids: &[VectorId], dataset: &VectorDataset, seed: u64) -> Result<VectorId> {
    let members = normalize_ids(ids, dataset)?;
    let local = dataset.select(&members)?;
    Ok(members[medoid_local(&local, seed) as usize])
}

fn normalize_ids(ids: &[VectorId], dataset: &VectorDataset) -> Result<Vec<VectorId>> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot build a graph over an empty subset"));
    }
    dataset.check_ids(ids)?;
    let mut members = ids.to_vec();
    members.sort_unstable();
    members.dedup();
    Ok(members)
}

/// Builds a proximity graph over `subset_ids`. Single-threaded and a pure
/// function of its arguments.
pub fn build_subgraph(
    subset_ids: &[VectorId],
    dataset: &VectorDataset,
    params: &BuildParams,
) -> Result<Subgraph> {
    params.validate()?;
    let members = normalize_ids(subset_ids, dataset)?;
    let n = members.len();
    let r = params.r;
    if n <= r + 1 {
        // degree bound is not binding: complete digraph
        let adjacency = members
            .iter()
            .map(|&i| members.iter().copied().filter(|&j| j != i).collect())
            .collect();
        let entry = medoid(&members, dataset, params.seed)?;
        return Ok(Subgraph {
            r: r as u32,
            members,
            adjacency,
            entry,
        });
    }

    let local = dataset.select(&members)?;
    let dist = |a: u32, b: u32| squared_l2(local.row(a), local.row(b));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut adj: Vec<Vec<u32>> = (0..n as u32)
        .map(|i| {
            rand::seq::index::sample(&mut rng, n - 1, r)
                .into_iter()
                .map(|j| {
                    if j as u32 >= i {
                        j as u32 + 1
                    } else {
                        j as u32
                    }
                })
                .collect()
        })
        .collect();
    let entry = medoid_local(&local, params.seed);

    let mut visited = VisitedSet::new(n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    for alpha in [1.0, params.alpha] {
        order.shuffle(&mut rng);
        for &i in &order {
            let q = local.row(i);
            let found = beam_search_local(
                &adj,
                entry,
                params.l_build,
                |j| squared_l2(q, local.row(j)),
                &mut visited,
            );
            let mut pool = found.expanded;
            pool.extend(adj[i as usize].iter().map(|&j| (dist(i, j), j)));
            let chosen = robust_prune_by(i, &mut pool, alpha, r, dist);
            for &j in &chosen {
                let back = &adj[j as usize];
                if back.contains(&i) {
                    continue;
                }
                if back.len() < r {
                    adj[j as usize].push(i);
                } else {
                    let mut pool: Vec<(f32, u32)> = back
                        .iter()
                        .map(|&x| (dist(j, x), x))
                        .chain(std::iter::once((dist(j, i), i)))
                        .collect();
                    adj[j as usize] = robust_prune_by(j, &mut pool, alpha, r, dist);
                }
            }
            adj[i as usize] = chosen;
        }
    }

    let adjacency = adj
        .into_iter()
        .map(|nbrs| nbrs.into_iter().map(|j| members[j as usize]).collect())
        .collect();
    Ok(Subgraph {
        r: r as u32,
        entry: members[entry as usize],
        members,
        adjacency,
    })
}

/// The default [`SubgraphBuilder`].
#[derive(Clone, Debug, Default)]
pub struct VamanaBuilder {
    pub params: BuildParams,
}

impl SubgraphBuilder for VamanaBuilder {
    fn build(&self, ids: &[VectorId], dataset: &VectorDataset) -> Result<Subgraph> {
        build_subgraph(ids, dataset, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{robust_prune, GraphView};
    use crate::synth::generate_clustered;

    fn params(r: usize, l: usize, seed: u64) -> BuildParams {
        BuildParams {
            r,
            l_build: l,
            alpha: 1.2,
            seed,
        }
    }

    #[test]
    fn single_point() {
        let ds = generate_clustered(5, 3, 1, 0.1, 0).unwrap();
        let g = build_subgraph(&[3], &ds, &params(4, 8, 0)).unwrap();
        assert_eq!(g.members, vec![3]);
        assert_eq!(g.adjacency, vec![Vec::<u32>::new()]);
        assert_eq!(g.entry, 3);
    }

    #[test]
    fn small_subset_is_complete() {
        let ds = generate_clustered(20, 3, 2, 0.1, 0).unwrap();
        let ids = [9, 2, 14, 5, 11];
        let g = build_subgraph(&ids, &ds, &params(4, 8, 0)).unwrap();
        g.check_invariants().unwrap();
        for (&m, nbrs) in g.members.iter().zip(&g.adjacency) {
            assert_eq!(nbrs.len(), 4);
            assert!(!nbrs.contains(&m));
        }
    }

    #[test]
    fn empty_subset_rejected() {
        let ds = generate_clustered(5, 3, 1, 0.1, 0).unwrap();
        assert!(build_subgraph(&[], &ds, &params(4, 8, 0)).is_err());
        assert!(build_subgraph(&[7], &ds, &params(4, 8, 0)).is_err());
    }

    #[test]
    fn params_validated() {
        let ds = generate_clustered(5, 3, 1, 0.1, 0).unwrap();
        assert!(build_subgraph(&[0], &ds, &params(1, 8, 0)).is_err());
        assert!(build_subgraph(&[0], &ds, &params(8, 4, 0)).is_err());
        let mut p = params(4, 8, 0);
        p.alpha = 0.9;
        assert!(build_subgraph(&[0], &ds, &p).is_err());
    }

    #[test]
    fn exact_medoid_small() {
        let ds = VectorDataset::from_rows(&[[0.0], [1.0], [2.0], [10.0]]).unwrap();
        assert_eq!(medoid(&[0, 1, 2, 3], &ds, 0).unwrap(), 1);
    }

    #[test]
    fn self_recall_on_clustered_subset() {
        let ds = generate_clustered(2000, 16, 10, 0.05, 21).unwrap();
        let ids: Vec<u32> = (0..2000).collect();
        let g = build_subgraph(&ids, &ds, &params(32, 64, 3)).unwrap();
        g.check_invariants().unwrap();
        let view = GraphView::new(&g).unwrap();
        let mut scratch = view.scratch();
        let hits = ids
            .iter()
            .filter(|&&i| {
                let res = view.search(&ds, ds.row(i), 64, 1, &mut scratch).unwrap();
                res.ids[0] == i
            })
            .count();
        assert!(hits as f64 >= 0.99 * 2000.0, "self recall {hits}/2000");
    }

    #[test]
    fn deterministic_and_degree_bounded() {
        let ds = generate_clustered(600, 8, 4, 0.1, 2).unwrap();
        let ids: Vec<u32> = (0..600).step_by(2).collect();
        let a = build_subgraph(&ids, &ds, &params(12, 24, 5)).unwrap();
        let b = build_subgraph(&ids, &ds, &params(12, 24, 5)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_degree() <= 12);
        a.check_invariants().unwrap();
    }

    #[test]
    fn pruning_an_adjacency_list_again_keeps_it_bounded() {
        let ds = generate_clustered(300, 4, 3, 0.1, 8).unwrap();
        let ids: Vec<u32> = (0..300).collect();
        let g = build_subgraph(&ids, &ds, &params(10, 20, 1)).unwrap();
        for (&m, nbrs) in g.members.iter().zip(&g.adjacency) {
            let again = robust_prune(m, nbrs, 1.2, 10, &ds).unwrap();
            assert!(again.len() <= nbrs.len());
            assert!(again.iter().all(|x| nbrs.contains(x)));
        }
    }

    #[test]
    fn cost_models() {
        assert_eq!(estimate_build_cost(0), 0);
        assert_eq!(estimate_build_cost(100), 100);
        let affine = CostModel { fixed: 5, slope: 2 };
        assert_eq!(affine.cost(10), 25);
        assert_eq!(CostModel::default().cost(7), 7);
    }
}
