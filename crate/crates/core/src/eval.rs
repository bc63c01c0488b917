//! Ground truth, recall, connectivity and end-to-end reports.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::{GroundTruth, VectorDataset, VectorId};
use crate::distance::squared_l2;
use crate::error::{Error, Result};
use crate::graph::estimate_build_cost;
use crate::graph::{build_subgraph, BuildParams, GraphView, Subgraph};
use crate::merge::{
    execute_merge_plan, plan_merge_tree, simulate_merge_span, MergeNode, MergeOptions,
};
use crate::partition::{overlap_stats, partition, PartitionParams};
use crate::schedule::{makespan, schedule_lpt, BuildTask};

#[derive(PartialEq)]
struct Cand(f32, VectorId);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Exact `k` nearest rows to `query`, nearest first, ties by ascending id.
pub fn brute_force_knn(dataset: &VectorDataset, query: &[f32], k: usize) -> Result<Vec<VectorId>> {
    if query.len() != dataset.dim() {
        return Err(Error::DimMismatch {
            expected: dataset.dim(),
            actual: query.len(),
        });
    }
    if k > dataset.len() {
        return Err(Error::invalid(format!(
            "k={k} exceeds dataset size {}",
            dataset.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    // max-heap holding the k best so far
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (id, row) in dataset.rows().enumerate() {
        let c = Cand(squared_l2(query, row), id as VectorId);
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().unwrap() {
            heap.pop();
            heap.push(c);
        }
    }
    Ok(heap.into_sorted_vec().into_iter().map(|c| c.1).collect())
}

/// Ground truth for every query, computed in parallel.
pub fn ground_truth(
    dataset: &VectorDataset,
    queries: &VectorDataset,
    k: usize,
) -> Result<GroundTruth> {
    let rows = queries
        .rows()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|q| brute_force_knn(dataset, q, k))
        .collect::<Result<Vec<_>>>()?;
    GroundTruth::new(rows)
}

/// `|result[..k] ∩ truth[..k]| / k`.
pub fn recall_at_k(result: &[VectorId], truth: &[VectorId], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("recall needs k >= 1"));
    }
    if result.len() < k || truth.len() < k {
        return Err(Error::invalid(format!(
            "recall@{k} needs k ids, got {} results and {} truth ids",
            result.len(),
            truth.len()
        )));
    }
    let truth = &truth[..k];
    let hits = result[..k].iter().filter(|id| truth.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

/// Fraction of members reachable from the entry along directed edges.
pub fn connectivity_check(graph: &Subgraph) -> Result<f64> {
    if graph.is_empty() {
        return Err(Error::invalid("connectivity of an empty graph"));
    }
    let start = graph
        .position(graph.entry)
        .ok_or_else(|| Error::invalid("graph entry is not a member"))?;
    let mut seen = vec![false; graph.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 1usize;
    while let Some(p) = queue.pop_front() {
        for &n in &graph.adjacency[p] {
            let Some(q) = graph.position(n) else { continue };
            if !seen[q] {
                seen[q] = true;
                count += 1;
                queue.push_back(q);
            }
        }
    }
    Ok(count as f64 / graph.len() as f64)
}

/// Mean recall@k of beam search on `graph` over all queries.
pub fn graph_recall(
    graph: &Subgraph,
    dataset: &VectorDataset,
    queries: &VectorDataset,
    truth: &GroundTruth,
    k: usize,
    beam: usize,
) -> Result<f64> {
    if truth.len() != queries.len() {
        return Err(Error::invalid(format!(
            "{} queries but {} ground-truth rows",
            queries.len(),
            truth.len()
        )));
    }
    let view = GraphView::new(graph)?;
    let l = beam.max(k);
    let recalls = (0..queries.len())
        .into_par_iter()
        .map_init(
            || view.scratch(),
            |scratch, q| {
                let res = view.search(dataset, queries.row(q as VectorId), l, k, scratch)?;
                recall_at_k(&res.ids, truth.row(q), k)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(recalls.iter().sum::<f64>() / recalls.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub beam: usize,
    pub recall_at_k: f64,
    pub avg_overlap: f64,
    pub build_cost_total: u64,
    pub simulated_makespan: u64,
    pub merge_depth: usize,
    /// Reachable fraction of the final graph from its entry.
    pub connectivity: f64,
    /// `(stage, seconds)`.
    pub wall_times: Vec<(String, f64)>,
}

impl EvalReport {
    /// Same report with wall times dropped, for comparisons.
    pub fn without_times(&self) -> Self {
        Self {
            wall_times: Vec::new(),
            ..self.clone()
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "k={}", self.k)?;
        writeln!(f, "beam={}", self.beam)?;
        writeln!(f, "recall_at_{}={:.4}", self.k, self.recall_at_k)?;
        writeln!(f, "avg_overlap={:.4}", self.avg_overlap)?;
        writeln!(f, "build_cost_total={}", self.build_cost_total)?;
        writeln!(f, "simulated_makespan={}", self.simulated_makespan)?;
        writeln!(f, "merge_depth={}", self.merge_depth)?;
        writeln!(f, "connectivity={:.4}", self.connectivity)?;
        for (stage, secs) in &self.wall_times {
            writeln!(f, "wall_{stage}_s={secs:.3}")?;
        }
        Ok(())
    }
}

/// Per-beam table: `beam recall` lines under a header.
pub fn beam_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("beam recall\n");
    for r in reports {
        out.push_str(&format!("{} {:.4}\n", r.beam, r.recall_at_k));
    }
    out
}

/// Runs partition, LPT-scheduled builds and the merge in memory, then
/// measures recall@k of the final graph at every beam width.
pub fn run_pipeline_eval(
    dataset: &VectorDataset,
    queries: &VectorDataset,
    pparams: &PartitionParams,
    bparams: &BuildParams,
    workers: usize,
    k: usize,
    beams: &[usize],
) -> Result<Vec<EvalReport>> {
    if beams.is_empty() {
        return Err(Error::invalid("no beam widths given"));
    }
    let mut times = Vec::new();
    let t = Instant::now();
    let plan = partition(dataset, pparams)?;
    times.push(("partition".to_string(), t.elapsed().as_secs_f64()));

    let tasks: Vec<BuildTask> = plan
        .subsets
        .iter()
        .enumerate()
        .map(|(i, s)| BuildTask {
            subset_index: i,
            cost: estimate_build_cost(s.len()),
        })
        .collect();
    let schedule = schedule_lpt(&tasks, workers)?;
    let t = Instant::now();
    let graphs = schedule
        .execute(|i| build_subgraph(&plan.subsets[i], dataset, bparams))
        .into_iter()
        .map(|(_, g)| g)
        .collect::<Result<Vec<_>>>()?;
    times.push(("build".to_string(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let merge_plan = plan_merge_tree(&plan.subsets)?;
    let span = simulate_merge_span(&merge_plan, workers, |n| match n {
        MergeNode::Internal { size, .. } => *size as u64,
        MergeNode::Leaf(_) => 0,
    })?;
    log::debug!("merge span {} of total {}", span.span, span.total);
    let outcome = execute_merge_plan(
        &merge_plan,
        graphs,
        dataset,
        bparams,
        &MergeOptions {
            workers,
            memory_budget: None,
        },
    )?;
    times.push(("merge".to_string(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let truth = ground_truth(dataset, queries, k)?;
    let connectivity = connectivity_check(&outcome.graph)?;
    let stats = overlap_stats(&plan);
    let mut reports = Vec::with_capacity(beams.len());
    for &beam in beams {
        let recall = graph_recall(&outcome.graph, dataset, queries, &truth, k, beam)?;
        reports.push(EvalReport {
            k,
            beam,
            recall_at_k: recall,
            avg_overlap: stats.avg_overlap,
            build_cost_total: tasks.iter().map(|t| t.cost).sum(),
            simulated_makespan: makespan(&schedule),
            merge_depth: outcome.depth,
            connectivity,
            wall_times: Vec::new(),
        });
    }
    times.push(("search".to_string(), t.elapsed().as_secs_f64()));
    for r in &mut reports {
        r.wall_times = times.clone();
    }
    Ok(reports)
}

/// Recall@k of a single graph built over the whole dataset.
pub fn monolithic_recall(
    dataset: &VectorDataset,
    queries: &VectorDataset,
    bparams: &BuildParams,
    k: usize,
    beam: usize,
) -> Result<f64> {
    let ids: Vec<VectorId> = (0..dataset.len() as VectorId).collect();
    let graph = build_subgraph(&ids, dataset, bparams)?;
    let truth = ground_truth(dataset, queries, k)?;
    graph_recall(&graph, dataset, queries, &truth, k, beam)
}
