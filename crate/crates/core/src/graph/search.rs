//! Best-first beam search.

use std::cmp::Ordering;

use crate::dataset::{VectorDataset, VectorId};
use crate::distance::squared_l2;
use crate::error::{Error, Result};

use super::Subgraph;

/// Generation-stamped membership set over dense local ids.
#[derive(Clone, Debug, Default)]
pub struct VisitedSet {
    marks: Vec<u32>,
    epoch: u32,
}

impl VisitedSet {
    pub fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    pub(crate) fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Marks `i`; returns false if it was already marked.
    #[inline]
    pub(crate) fn insert(&mut self, i: u32) -> bool {
        let slot = &mut self.marks[i as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[inline]
pub(crate) fn by_dist_then_id(a: &(f32, u32), b: &(f32, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

pub(crate) struct BeamOutcome {
    /// Best `l` evaluated nodes, ascending `(distance, id)`.
    pub best: Vec<(f32, u32)>,
    /// Every expanded node with its distance, in expansion order.
    pub expanded: Vec<(f32, u32)>,
}

/// Beam search over local ids. `dist` maps a local id to its distance from
/// the query; ties are broken by ascending local id.
pub(crate) fn beam_search_local<F: FnMut(u32) -> f32>(
    adj: &[Vec<u32>],
    entry: u32,
    l: usize,
    mut dist: F,
    visited: &mut VisitedSet,
) -> BeamOutcome {
    visited.reset(adj.len());
    // (distance, id, expanded)
    let mut list: Vec<(f32, u32, bool)> = Vec::with_capacity(l + 1);
    let mut expanded = Vec::new();
    visited.insert(entry);
    list.push((dist(entry), entry, false));
    while let Some(pos) = list.iter().position(|c| !c.2) {
        list[pos].2 = true;
        let (d, node, _) = list[pos];
        expanded.push((d, node));
        for &nb in &adj[node as usize] {
            if !visited.insert(nb) {
                continue;
            }
            let cand = (dist(nb), nb);
            if list.len() == l {
                let last = list.last().unwrap();
                if by_dist_then_id(&cand, &(last.0, last.1)) != Ordering::Less {
                    continue;
                }
            }
            let at =
                list.partition_point(|c| by_dist_then_id(&(c.0, c.1), &cand) == Ordering::Less);
            list.insert(at, (cand.0, cand.1, false));
            list.truncate(l);
        }
    }
    BeamOutcome {
        best: list.into_iter().map(|(d, i, _)| (d, i)).collect(),
        expanded,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Nearest ids first.
    pub ids: Vec<VectorId>,
    /// Distances matching `ids`, in whatever metric the search used
    /// (squared L2 for full-precision search).
    pub distances: Vec<f32>,
    /// Every node expanded during the search.
    pub visited: Vec<VectorId>,
}

/// Search-ready form of a [`Subgraph`] with adjacency in local indices.
#[derive(Clone, Debug)]
pub struct GraphView {
    members: Vec<VectorId>,
    adj: Vec<Vec<u32>>,
    entry: u32,
}

impl GraphView {
    pub fn new(graph: &Subgraph) -> Result<Self> {
        let entry = graph
            .position(graph.entry)
            .ok_or_else(|| Error::invalid("graph entry is not a member"))?
            as u32;
        let adj = graph
            .adjacency
            .iter()
            .map(|nbrs| {
                nbrs.iter()
                    .map(|&n| {
                        graph
                            .position(n)
                            .map(|p| p as u32)
                            .ok_or_else(|| Error::invalid(format!("edge to non-member {n}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members: graph.members.clone(),
            adj,
            entry,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn scratch(&self) -> VisitedSet {
        VisitedSet::new(self.members.len())
    }

    /// Beam search with a caller-supplied distance over global ids.
    pub fn search_by<F: FnMut(VectorId) -> f32>(
        &self,
        l: usize,
        k: usize,
        mut dist: F,
        visited: &mut VisitedSet,
    ) -> Result<SearchResult> {
        if k == 0 || k > l {
            return Err(Error::invalid(format!(
                "need 1 <= k <= l, got k={k}, l={l}"
            )));
        }
        let members = &self.members;
        let out = beam_search_local(
            &self.adj,
            self.entry,
            l,
            |i| dist(members[i as usize]),
            visited,
        );
        let top = &out.best[..k.min(out.best.len())];
        Ok(SearchResult {
            ids: top.iter().map(|&(_, i)| members[i as usize]).collect(),
            distances: top.iter().map(|&(d, _)| d).collect(),
            visited: out
                .expanded
                .iter()
                .map(|&(_, i)| members[i as usize])
                .collect(),
        })
    }

    /// Full-precision search.
    pub fn search(
        &self,
        dataset: &VectorDataset,
        query: &[f32],
        l: usize,
        k: usize,
        visited: &mut VisitedSet,
    ) -> Result<SearchResult> {
        if query.len() != dataset.dim() {
            return Err(Error::DimMismatch {
                expected: dataset.dim(),
                actual: query.len(),
            });
        }
        self.search_by(l, k, |id| squared_l2(query, dataset.row(id)), visited)
    }
}

/// Convenience wrapper that builds a [`GraphView`] for a single query.
pub fn greedy_beam_search(
    graph: &Subgraph,
    dataset: &VectorDataset,
    query: &[f32],
    l: usize,
    k: usize,
) -> Result<SearchResult> {
    dataset.check_ids(&graph.members)?;
    let view = GraphView::new(graph)?;
    let mut visited = view.scratch();
    view.search(dataset, query, l, k, &mut visited)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: u32) -> Subgraph {
        Subgraph {
            r: n.saturating_sub(1).max(2),
            members: (0..n).collect(),
            adjacency: (0..n)
                .map(|i| (0..n).filter(|&j| j != i).collect())
                .collect(),
            entry: 0,
        }
    }

    #[test]
    fn complete_graph_gives_exact_order() {
        let rows: Vec<[f32; 2]> = (0..12)
            .map(|i| [(i * 7 % 12) as f32, (i % 3) as f32])
            .collect();
        let ds = VectorDataset::from_rows(&rows).unwrap();
        let g = complete(12);
        let q = [5.2, 1.1];
        let res = greedy_beam_search(&g, &ds, &q, 12, 12).unwrap();
        let mut brute: Vec<(f32, u32)> = (0..12).map(|i| (squared_l2(&q, ds.row(i)), i)).collect();
        brute.sort_by(by_dist_then_id);
        assert_eq!(res.ids, brute.iter().map(|b| b.1).collect::<Vec<_>>());
        for id in &res.ids {
            assert!(res.visited.contains(id));
        }
    }

    #[test]
    fn ties_break_by_id() {
        let ds = VectorDataset::from_rows(&[[0.0], [1.0], [-1.0], [1.0]]).unwrap();
        let g = complete(4);
        let res = greedy_beam_search(&g, &ds, &[0.0], 4, 4).unwrap();
        assert_eq!(res.ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_k_above_l() {
        let ds = VectorDataset::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(greedy_beam_search(&complete(2), &ds, &[0.0], 1, 2).is_err());
        assert!(greedy_beam_search(&complete(2), &ds, &[0.0, 1.0], 2, 1).is_err());
    }

    #[test]
    fn single_node() {
        let ds = VectorDataset::from_rows(&[[3.0]]).unwrap();
        let g = Subgraph {
            r: 2,
            members: vec![0],
            adjacency: vec![vec![]],
            entry: 0,
        };
        let res = greedy_beam_search(&g, &ds, &[0.0], 4, 1).unwrap();
        assert_eq!(res.ids, vec![0]);
        assert_eq!(res.distances, vec![9.0]);
    }
}
