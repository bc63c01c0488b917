//! Alpha-pruning neighbor selection.

use crate::dataset::{VectorDataset, VectorId};
use crate::distance::squared_l2;
use crate::error::{Error, Result};

use super::search::by_dist_then_id;

/// Selects at most `r` diverse neighbors for `node`.
///
/// `candidates` carry their squared distance to `node`; `dist_sq` returns the
/// squared distance between two candidates. Candidates are taken nearest
/// first; after keeping `p`, every remaining `c` with
/// `alpha * d(p, c) <= d(node, c)` is dropped. Duplicates and `node` itself
/// are ignored.
pub fn robust_prune_by<F: FnMut(u32, u32) -> f32>(
    node: u32,
    candidates: &mut Vec<(f32, u32)>,
    alpha: f32,
    r: usize,
    mut dist_sq: F,
) -> Vec<u32> {
    candidates.retain(|c| c.1 != node);
    candidates.sort_by(by_dist_then_id);
    candidates.dedup_by_key(|c| c.1);
    let alpha_sq = alpha * alpha;
    let mut alive = vec![true; candidates.len()];
    let mut kept = Vec::with_capacity(r);
    for i in 0..candidates.len() {
        if kept.len() >= r {
            break;
        }
        if !alive[i] {
            continue;
        }
        let p = candidates[i].1;
        kept.push(p);
        for j in i + 1..candidates.len() {
            if alive[j] {
                let (d_node, c) = candidates[j];
                if alpha_sq * dist_sq(p, c) <= d_node {
                    alive[j] = false;
                }
            }
        }
    }
    kept
}

/// [`robust_prune_by`] over global ids with full-precision distances.
pub fn robust_prune(
    node: VectorId,
    candidates: &[VectorId],
    alpha: f32,
    r: usize,
    dataset: &VectorDataset,
) -> Result<Vec<VectorId>> {
    if candidates.contains(&node) {
        return Err(Error::invalid(format!(
            "node {node} is among its own candidates"
        )));
    }
    dataset.check_ids(candidates)?;
    let origin = dataset.get(node)?;
    let mut pool: Vec<(f32, u32)> = candidates
        .iter()
        .map(|&c| (squared_l2(origin, dataset.row(c)), c))
        .collect();
    Ok(robust_prune_by(node, &mut pool, alpha, r, |a, b| {
        squared_l2(dataset.row(a), dataset.row(b))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collinear_hand_case() {
        let ds = VectorDataset::from_rows(&[[0.0], [1.0], [2.0], [4.0]]).unwrap();
        assert_eq!(robust_prune(0, &[1, 2, 3], 1.0, 8, &ds).unwrap(), vec![1]);
    }

    #[test]
    fn spread_candidates_all_kept() {
        // unit axes: pairwise distance sqrt(2) > 1 = distance from origin
        let ds = VectorDataset::from_rows(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        .unwrap();
        let mut got = robust_prune(0, &[3, 1, 2], 1.2, 3, &ds).unwrap();
        got.sort();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn node_in_candidates_rejected() {
        let ds = VectorDataset::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(robust_prune(0, &[0, 1], 1.0, 2, &ds).is_err());
    }

    proptest! {
        #[test]
        fn output_bounded_and_drawn_from_candidates(
            pts in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 3), 2..40),
            r in 1usize..10,
            alpha in 1.0f32..2.0,
        ) {
            let ds = VectorDataset::from_rows(&pts).unwrap();
            let cands: Vec<u32> = (1..pts.len() as u32).collect();
            let out = robust_prune(0, &cands, alpha, r, &ds).unwrap();
            prop_assert!(out.len() <= r);
            prop_assert!(!out.is_empty());
            let mut dedup = out.clone();
            dedup.sort();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), out.len());
            prop_assert!(out.iter().all(|c| cands.contains(c)));
        }
    }
}
