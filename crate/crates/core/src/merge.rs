//! Agglomerative merging of subgraphs along an overlap-prioritized binary tree.
//!
//! Planning pairs, level by level, the two current roots with the largest
//! member overlap. Execution merges bottom-up; a merge starts as soon as both
//! of its inputs exist, with at most `workers` merges in flight. Each merge
//! copies the adjacency of ids present in only one input and re-prunes the
//! union of both lists for ids present in both.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{VectorDataset, VectorId};
use crate::distance::squared_l2;
use crate::error::{Error, Result};
use crate::eval::connectivity_check;
use crate::graph::{robust_prune_by, BuildParams, Subgraph};

/// Children per internal merge node.
pub const MERGE_FANOUT: usize = 2;
const ENTRY_CANDIDATES: usize = 32;
const ENTRY_PIVOTS: usize = 256;

/// Size of `a ∩ b` for ascending id lists.
pub fn overlap_count(a: &[VectorId], b: &[VectorId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn union_sorted(a: &[VectorId], b: &[VectorId]) -> Vec<VectorId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MergeNode {
    /// Index into the subgraph list.
    Leaf(usize),
    Internal {
        left: Box<MergeNode>,
        right: Box<MergeNode>,
        /// Shared members of the two children.
        overlap: usize,
        /// Members of the merged result.
        size: usize,
        /// Planning level, 1 for merges of original subgraphs' level.
        level: usize,
        /// Position among the merges of its level.
        index: usize,
    },
}

impl MergeNode {
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            MergeNode::Leaf(i) => out.push(*i),
            MergeNode::Internal { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Longest root-to-leaf edge count.
    pub fn height(&self) -> usize {
        match self {
            MergeNode::Leaf(_) => 0,
            MergeNode::Internal { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }

    pub fn internal_count(&self) -> usize {
        match self {
            MergeNode::Leaf(_) => 0,
            MergeNode::Internal { left, right, .. } => {
                1 + left.internal_count() + right.internal_count()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergePlan {
    pub root: MergeNode,
    /// Number of planning levels.
    pub depth: usize,
    pub leaves: usize,
}

/// Plans the merge tree for subgraphs with the given member sets.
///
/// On every level all pairwise overlaps among the current roots are
/// computed and the pair with the largest overlap is merged first (ties go to
/// the pair with the lower first index, then lower second index), until at
/// most one root is left over; that one moves up unchanged.
pub fn plan_merge_tree(member_sets: &[Vec<VectorId>]) -> Result<MergePlan> {
    if member_sets.is_empty() {
        return Err(Error::invalid("cannot plan a merge over zero subgraphs"));
    }
    let mut roots: Vec<(MergeNode, Vec<VectorId>)> = member_sets
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut m = m.clone();
            m.sort_unstable();
            m.dedup();
            (MergeNode::Leaf(i), m)
        })
        .collect();
    let mut depth = 0;
    while roots.len() > 1 {
        depth += 1;
        let n = roots.len();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((overlap_count(&roots[i].1, &roots[j].1), i, j));
            }
        }
        pairs.sort_by_key(|&(o, i, j)| (Reverse(o), i, j));
        let mut partner: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut paired = 0;
        for (o, i, j) in pairs {
            if n - paired < 2 {
                break;
            }
            if partner[i].is_none() && partner[j].is_none() {
                partner[i] = Some((j, o));
                partner[j] = Some((i, o));
                paired += 2;
            }
        }
        let mut slots: Vec<Option<(MergeNode, Vec<VectorId>)>> =
            roots.into_iter().map(Some).collect();
        let mut next = Vec::with_capacity(n.div_ceil(2));
        let mut index = 0;
        for i in 0..n {
            match partner[i] {
                Some((j, overlap)) if j > i => {
                    let (left, lm) = slots[i].take().unwrap();
                    let (right, rm) = slots[j].take().unwrap();
                    let members = union_sorted(&lm, &rm);
                    next.push((
                        MergeNode::Internal {
                            left: Box::new(left),
                            right: Box::new(right),
                            overlap,
                            size: members.len(),
                            level: depth,
                            index,
                        },
                        members,
                    ));
                    index += 1;
                }
                Some(_) => {}
                None => next.push(slots[i].take().unwrap()),
            }
        }
        roots = next;
    }
    Ok(MergePlan {
        root: roots.pop().unwrap().0,
        depth,
        leaves: member_sets.len(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub overlap: usize,
    /// Nodes whose adjacency went through pruning during the merge.
    pub pruned_nodes: usize,
}

/// Merges two graphs over the same dataset. See [`merge_pair_detailed`].
pub fn merge_pair(
    ga: &Subgraph,
    gb: &Subgraph,
    dataset: &VectorDataset,
    params: &BuildParams,
) -> Result<Subgraph> {
    merge_pair_detailed(ga, gb, dataset, params).map(|(g, _)| g)
}

/// Merges two graphs.
///
/// * ids in one input keep their adjacency list;
/// * ids in both get `robust_prune` over the union of their two lists;
/// * an edge chosen for a shared id that was missing from one of its input
///   lists gets a reverse edge, and a target pushed past `r` is re-pruned;
/// * the entry is the candidate (both input entries plus a sample of shared
///   ids) with the smallest summed distance to a sample of members.
pub fn merge_pair_detailed(
    ga: &Subgraph,
    gb: &Subgraph,
    dataset: &VectorDataset,
    params: &BuildParams,
) -> Result<(Subgraph, MergeStats)> {
    params.validate()?;
    dataset.check_ids(&ga.members)?;
    dataset.check_ids(&gb.members)?;
    let r = params.r;
    if ga.r as usize > r || gb.r as usize > r {
        return Err(Error::invalid(format!(
            "inputs built with r={}/{} exceed merge r={r}",
            ga.r, gb.r
        )));
    }
    let members = union_sorted(&ga.members, &gb.members);
    let mut adjacency: Vec<Vec<VectorId>> = Vec::with_capacity(members.len());
    let mut shared: Vec<(usize, usize, usize)> = Vec::new(); // (union pos, pos a, pos b)
    {
        let (mut i, mut j) = (0, 0);
        for (pos, &id) in members.iter().enumerate() {
            let in_a = ga.members.get(i) == Some(&id);
            let in_b = gb.members.get(j) == Some(&id);
            match (in_a, in_b) {
                (true, true) => {
                    shared.push((pos, i, j));
                    adjacency.push(Vec::new());
                }
                (true, false) => adjacency.push(ga.adjacency[i].clone()),
                (false, true) => adjacency.push(gb.adjacency[j].clone()),
                (false, false) => unreachable!("union member missing from both inputs"),
            }
            i += in_a as usize;
            j += in_b as usize;
        }
    }

    let row = |id: VectorId| dataset.row(id);
    let dist = |a: VectorId, b: VectorId| squared_l2(row(a), row(b));
    let mut new_edges: Vec<(VectorId, VectorId)> = Vec::new();
    for &(pos, pa, pb) in &shared {
        let u = members[pos];
        let (la, lb) = (&ga.adjacency[pa], &gb.adjacency[pb]);
        let mut pool: Vec<(f32, VectorId)> =
            la.iter().chain(lb).map(|&v| (dist(u, v), v)).collect();
        let chosen = robust_prune_by(u, &mut pool, params.alpha, r, dist);
        for &v in &chosen {
            if !(la.contains(&v) && lb.contains(&v)) {
                new_edges.push((u, v));
            }
        }
        adjacency[pos] = chosen;
    }

    let mut repruned = vec![false; members.len()];
    for (u, v) in new_edges {
        let pv = members.binary_search(&v).expect("neighbor is a member");
        if adjacency[pv].contains(&u) {
            continue;
        }
        adjacency[pv].push(u);
        if adjacency[pv].len() > r {
            let mut pool: Vec<(f32, VectorId)> =
                adjacency[pv].iter().map(|&x| (dist(v, x), x)).collect();
            adjacency[pv] = robust_prune_by(v, &mut pool, params.alpha, r, dist);
            repruned[pv] = true;
        }
    }
    for &(pos, _, _) in &shared {
        repruned[pos] = true;
    }

    let entry = merged_entry(ga, gb, &members, &shared, dataset, params.seed);
    let stats = MergeStats {
        overlap: shared.len(),
        pruned_nodes: repruned.iter().filter(|&&x| x).count(),
    };
    Ok((
        Subgraph {
            r: r as u32,
            members,
            adjacency,
            entry,
        },
        stats,
    ))
}

fn merged_entry(
    ga: &Subgraph,
    gb: &Subgraph,
    members: &[VectorId],
    shared: &[(usize, usize, usize)],
    dataset: &VectorDataset,
    seed: u64,
) -> VectorId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_7472_7921);
    let mut candidates = vec![ga.entry, gb.entry];
    let take = shared.len().min(ENTRY_CANDIDATES);
    let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, shared.len(), take).into_vec();
    picks.sort_unstable();
    candidates.extend(picks.into_iter().map(|k| members[shared[k].0]));
    candidates.sort_unstable();
    candidates.dedup();
    let pivots: Vec<VectorId> = if members.len() <= ENTRY_PIVOTS {
        members.to_vec()
    } else {
        let mut p: Vec<usize> =
            rand::seq::index::sample(&mut rng, members.len(), ENTRY_PIVOTS).into_vec();
        p.sort_unstable();
        p.into_iter().map(|k| members[k]).collect()
    };
    let mut best = (f64::INFINITY, candidates[0]);
    for &c in &candidates {
        let x = dataset.row(c);
        let total: f64 = pivots
            .iter()
            .map(|&p| squared_l2(x, dataset.row(p)).sqrt() as f64)
            .sum();
        if total < best.0 {
            best = (total, c);
        }
    }
    best.1
}

/// One line of the merge report.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeRecord {
    pub level: usize,
    pub index: usize,
    pub size_a: usize,
    pub size_b: usize,
    pub overlap: usize,
    pub pruned_nodes: usize,
    pub connected: bool,
}

impl fmt::Display for MergeRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "merge {}/{}: |A|={} |B|={} overlap={} pruned_nodes={} connected={}",
            self.level,
            self.index,
            self.size_a,
            self.size_b,
            self.overlap,
            self.pruned_nodes,
            if self.connected { "yes" } else { "no" }
        )
    }
}

/// Observer hook fired after every merge.
pub struct MergeStep<'a> {
    pub record: &'a MergeRecord,
    pub left: &'a Subgraph,
    pub right: &'a Subgraph,
    pub output: &'a Subgraph,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeOptions {
    /// Maximum number of concurrent merges.
    pub workers: usize,
    /// Abort instead of merging when a merge's estimated footprint is larger.
    pub memory_budget: Option<u64>,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            memory_budget: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MergeOutcome {
    pub graph: Subgraph,
    /// Sorted by `(level, index)`.
    pub records: Vec<MergeRecord>,
    pub depth: usize,
}

impl MergeOutcome {
    pub fn report(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Rough in-memory size of a merge: vectors plus full adjacency lists.
fn merge_footprint(members: usize, dim: usize, r: usize) -> u64 {
    members as u64 * (4 * dim as u64 + 4 * r as u64 + 8)
}

pub fn execute_merge_plan(
    plan: &MergePlan,
    subgraphs: Vec<Subgraph>,
    dataset: &VectorDataset,
    params: &BuildParams,
    options: &MergeOptions,
) -> Result<MergeOutcome> {
    execute_merge_plan_observed(plan, subgraphs, dataset, params, options, &|_| {})
}

/// Executes `plan` on a pool of `options.workers` threads. The output does
/// not depend on the worker count.
pub fn execute_merge_plan_observed(
    plan: &MergePlan,
    subgraphs: Vec<Subgraph>,
    dataset: &VectorDataset,
    params: &BuildParams,
    options: &MergeOptions,
    observer: &(dyn Fn(&MergeStep<'_>) + Sync),
) -> Result<MergeOutcome> {
    if options.workers == 0 {
        return Err(Error::invalid("need at least one merge worker"));
    }
    let mut leaves = plan.root.leaves();
    leaves.sort_unstable();
    if leaves != (0..subgraphs.len()).collect::<Vec<_>>() {
        return Err(Error::invalid(format!(
            "plan covers {} leaves but {} subgraphs were supplied",
            plan.leaves,
            subgraphs.len()
        )));
    }
    let slots: Vec<Mutex<Option<Subgraph>>> =
        subgraphs.into_iter().map(|g| Mutex::new(Some(g))).collect();
    let ctx = Ctx {
        slots: &slots,
        dataset,
        params,
        options,
        observer,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start merge workers: {e}")))?;
    let (graph, mut records) = pool.install(|| ctx.run(&plan.root))?;
    records.sort_by_key(|r| (r.level, r.index));
    Ok(MergeOutcome {
        graph,
        records,
        depth: plan.depth,
    })
}

struct Ctx<'a> {
    slots: &'a [Mutex<Option<Subgraph>>],
    dataset: &'a VectorDataset,
    params: &'a BuildParams,
    options: &'a MergeOptions,
    observer: &'a (dyn Fn(&MergeStep<'_>) + Sync),
}

impl Ctx<'_> {
    fn run(&self, node: &MergeNode) -> Result<(Subgraph, Vec<MergeRecord>)> {
        match node {
            MergeNode::Leaf(i) => {
                let g = self.slots[*i]
                    .lock()
                    .unwrap()
                    .take()
                    .ok_or_else(|| Error::invalid(format!("subgraph {i} used twice")))?;
                Ok((g, Vec::new()))
            }
            MergeNode::Internal {
                left,
                right,
                level,
                index,
                size,
                ..
            } => {
                let (l, r) = rayon::join(|| self.run(left), || self.run(right));
                let ((ga, mut records), (gb, more)) = (l?, r?);
                records.extend(more);
                if let Some(budget) = self.options.memory_budget {
                    let needed = merge_footprint(*size, self.dataset.dim(), self.params.r);
                    if needed > budget {
                        return Err(Error::MemoryBudget {
                            members: *size,
                            needed,
                            budget,
                        });
                    }
                }
                let (out, stats) = merge_pair_detailed(&ga, &gb, self.dataset, self.params)?;
                let record = MergeRecord {
                    level: *level,
                    index: *index,
                    size_a: ga.len(),
                    size_b: gb.len(),
                    overlap: stats.overlap,
                    pruned_nodes: stats.pruned_nodes,
                    connected: connectivity_check(&out)? >= 1.0,
                };
                log::debug!("{record}");
                (self.observer)(&MergeStep {
                    record: &record,
                    left: &ga,
                    right: &gb,
                    output: &out,
                });
                records.push(record);
                Ok((out, records))
            }
        }
    }
}

/// Simulated timing of a merge plan on `workers` slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanEstimate {
    /// Completion time of the root when ready merges start immediately.
    pub span: u64,
    /// Sum of all merge costs, i.e. the sequential time.
    pub total: u64,
}

/// Event simulation of the merge plan: a merge becomes ready when both
/// children are done and starts as soon as a worker is free (ready merges in
/// `(level, index)` order).
pub fn simulate_merge_span(
    plan: &MergePlan,
    workers: usize,
    cost: impl Fn(&MergeNode) -> u64,
) -> Result<SpanEstimate> {
    if workers == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    struct Item<'a> {
        node: &'a MergeNode,
        parent: Option<usize>,
        pending: usize,
        key: (usize, usize),
    }
    let mut items: Vec<Item> = Vec::new();
    fn flatten<'a>(node: &'a MergeNode, parent: Option<usize>, items: &mut Vec<Item<'a>>) {
        if let MergeNode::Internal {
            left,
            right,
            level,
            index,
            ..
        } = node
        {
            let me = items.len();
            let pending = [left.as_ref(), right.as_ref()]
                .into_iter()
                .filter(|c| matches!(c, MergeNode::Internal { .. }))
                .count();
            items.push(Item {
                node,
                parent,
                pending,
                key: (*level, *index),
            });
            flatten(left, Some(me), items);
            flatten(right, Some(me), items);
        }
    }
    flatten(&plan.root, None, &mut items);
    let total: u64 = items.iter().map(|it| cost(it.node)).sum();

    let mut ready: BinaryHeap<Reverse<((usize, usize), usize)>> = items
        .iter()
        .enumerate()
        .filter(|(_, it)| it.pending == 0)
        .map(|(i, it)| Reverse((it.key, i)))
        .collect();
    let mut running: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut now = 0u64;
    let mut done = 0;
    let mut free = workers;
    while done < items.len() {
        while free > 0 {
            let Some(Reverse((_, i))) = ready.pop() else {
                break;
            };
            free -= 1;
            running.push(Reverse((now + cost(items[i].node), i)));
        }
        let Reverse((t, i)) = running.pop().expect("a merge is running");
        now = t;
        done += 1;
        free += 1;
        if let Some(p) = items[i].parent {
            items[p].pending -= 1;
            if items[p].pending == 0 {
                ready.push(Reverse((items[p].key, p)));
            }
        }
    }
    Ok(SpanEstimate { span: now, total })
}
