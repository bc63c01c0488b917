//! End-to-end orchestration with on-disk artifacts.
//!
//! Every stage writes its output under one directory so any later stage can
//! be rerun from disk alone:
//!
//! | file | contents |
//! |------|----------|
//! | `base.fvecs`, `queries.fvecs` | vectors |
//! | `plan.sog` | centroids and subset members |
//! | `pq.codebook`, `pq.codes` | product quantization (optional) |
//! | `schedule.txt` | LPT worker assignment |
//! | `subgraphs/subgraph_NNNN.graph` | one graph per subset |
//! | `final.graph`, `merge_report.txt` | merge output |
//! | `gt.ivecs`, `report.txt` | ground truth and evaluation |

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{stage_seed, PipelineConfig, Stage};
use crate::dataset::{GroundTruth, VectorDataset, VectorId};
use crate::error::{Error, Result};
use crate::eval::{beam_table, connectivity_check, graph_recall, ground_truth, EvalReport};
use crate::graph::{build_subgraph, estimate_build_cost, BuildParams, Subgraph};
use crate::io;
use crate::merge::{execute_merge_plan, plan_merge_tree, MergeOptions, MergeOutcome};
use crate::partition::{overlap_stats, partition, PartitionPlan};
use crate::quantize::{train_pq, Encoder, PqCodebook, PqCodes};
use crate::schedule::{makespan, schedule_lpt, BuildTask, WorkerSchedule};
use crate::synth::GaussianMixture;

/// Training rows per codeword for the product quantizer.
const PQ_SAMPLE_PER_WORD: usize = 16;

/// File layout of one pipeline run.
#[derive(Clone, Debug)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Creates the directory tree.
    pub fn create(&self) -> Result<()> {
        let dir = self.subgraph_dir();
        std::fs::create_dir_all(&dir).map_err(|source| Error::File { path: dir, source })
    }

    pub fn base(&self) -> PathBuf {
        self.root.join("base.fvecs")
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join("queries.fvecs")
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.sog")
    }

    pub fn codebook(&self) -> PathBuf {
        self.root.join("pq.codebook")
    }

    pub fn codes(&self) -> PathBuf {
        self.root.join("pq.codes")
    }

    pub fn schedule(&self) -> PathBuf {
        self.root.join("schedule.txt")
    }

    pub fn subgraph_dir(&self) -> PathBuf {
        self.root.join("subgraphs")
    }

    pub fn subgraph(&self, i: usize) -> PathBuf {
        subgraph_path(&self.subgraph_dir(), i)
    }

    pub fn final_graph(&self) -> PathBuf {
        self.root.join("final.graph")
    }

    pub fn merge_report(&self) -> PathBuf {
        self.root.join("merge_report.txt")
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("gt.ivecs")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

pub fn subgraph_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("subgraph_{i:04}.graph"))
}

impl PipelineConfig {
    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.out_dir)
    }

    pub fn plan_path(&self) -> PathBuf {
        self.plan.clone().unwrap_or_else(|| self.artifacts().plan())
    }

    pub fn graphs_dir(&self) -> PathBuf {
        self.graphs
            .clone()
            .unwrap_or_else(|| self.artifacts().subgraph_dir())
    }

    pub fn graph_path(&self) -> PathBuf {
        self.graph
            .clone()
            .unwrap_or_else(|| self.artifacts().final_graph())
    }

    /// Configured base vectors, else the copy persisted under `out_dir`.
    pub fn base_path(&self) -> PathBuf {
        self.input
            .clone()
            .unwrap_or_else(|| self.artifacts().base())
    }

    pub fn queries_path(&self) -> PathBuf {
        self.queries
            .clone()
            .unwrap_or_else(|| self.artifacts().queries())
    }
}

/// Reads `.bvecs` by extension, `.fvecs` otherwise.
pub fn read_vectors(path: &Path) -> Result<VectorDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bvecs") => io::read_bvecs(path),
        _ => io::read_fvecs(path),
    }
}

/// Base and query vectors: read from the configured files, or drawn from
/// one Gaussian mixture.
pub fn load_data(cfg: &PipelineConfig) -> Result<(VectorDataset, VectorDataset)> {
    match (&cfg.input, &cfg.queries) {
        (Some(input), Some(queries)) => {
            let base = read_vectors(input)?;
            let q = read_vectors(queries)?;
            if q.dim() != base.dim() {
                return Err(Error::DimMismatch {
                    expected: base.dim(),
                    actual: q.dim(),
                });
            }
            Ok((base, q))
        }
        (Some(_), None) => Err(Error::invalid("`queries` is required when `input` is set")),
        (None, _) => synth_data(cfg),
    }
}

pub fn synth_data(cfg: &PipelineConfig) -> Result<(VectorDataset, VectorDataset)> {
    let mixture = GaussianMixture::new(
        cfg.synth_dim,
        cfg.synth_clusters,
        cfg.synth_spread,
        stage_seed(cfg.seed, Stage::Synth),
    )?;
    let base = mixture.sample(cfg.synth_n, stage_seed(cfg.seed, Stage::Synth))?;
    let queries = mixture.sample(cfg.queries_n, stage_seed(cfg.seed, Stage::Queries))?;
    Ok((base, queries))
}

/// Trains a codebook on a seeded sample and encodes every vector once.
pub fn quantize(
    dataset: &VectorDataset,
    cfg: &PipelineConfig,
) -> Result<Option<(PqCodebook, PqCodes)>> {
    let Some(m) = cfg.pq_m else { return Ok(None) };
    let n = dataset.len();
    let take = n.min(cfg.pq_ks * PQ_SAMPLE_PER_WORD);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, Stage::Quantize));
    let mut ids: Vec<VectorId> = rand::seq::index::sample(&mut rng, n, take)
        .into_iter()
        .map(|i| i as VectorId)
        .collect();
    ids.sort_unstable();
    let codebook = train_pq(
        &dataset.select(&ids)?,
        m,
        cfg.pq_ks,
        stage_seed(cfg.seed, Stage::Quantize),
    )?;
    let encoder = Encoder::new(&codebook);
    // disjoint id ranges, one per worker
    let chunk = n.div_ceil(cfg.workers);
    let shards = (0..n)
        .step_by(chunk.max(1))
        .map(|lo| {
            let ids: Vec<VectorId> = (lo..(lo + chunk).min(n)).map(|i| i as VectorId).collect();
            encoder.encode_ids(dataset, &ids)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut codes = PqCodes::merge_shards(n, m, &shards)?;
    codes.encode_calls = encoder.calls();
    Ok(Some((codebook, codes)))
}

/// Partitioning and quantization run concurrently; codes are per vector, not
/// per subset membership.
pub fn partition_and_quantize(
    dataset: &VectorDataset,
    cfg: &PipelineConfig,
) -> Result<(PartitionPlan, Option<(PqCodebook, PqCodes)>)> {
    let params = cfg.partition_params(dataset.len());
    let (plan, pq) = rayon::join(|| partition(dataset, &params), || quantize(dataset, cfg));
    Ok((plan?, pq?))
}

pub fn build_tasks(plan: &PartitionPlan) -> Vec<BuildTask> {
    plan.subsets
        .iter()
        .enumerate()
        .map(|(i, s)| BuildTask {
            subset_index: i,
            cost: estimate_build_cost(s.len()),
        })
        .collect()
}

pub fn schedule_builds(plan: &PartitionPlan, workers: usize) -> Result<WorkerSchedule> {
    schedule_lpt(&build_tasks(plan), workers)
}

/// Builds every subset on the worker threads of `schedule`.
pub fn build_all(
    dataset: &VectorDataset,
    plan: &PartitionPlan,
    schedule: &WorkerSchedule,
    params: &BuildParams,
) -> Result<Vec<Subgraph>> {
    let mut scheduled: Vec<usize> = schedule.assignment.concat();
    scheduled.sort_unstable();
    if scheduled != (0..plan.phi()).collect::<Vec<_>>() {
        return Err(Error::invalid(
            "schedule does not cover every subset exactly once",
        ));
    }
    schedule
        .execute(|i| {
            let t = Instant::now();
            let g = build_subgraph(&plan.subsets[i], dataset, params);
            log::debug!(
                "subgraph {i}: {} members in {:.2?}",
                plan.subsets[i].len(),
                t.elapsed()
            );
            g
        })
        .into_iter()
        .map(|(_, g)| g)
        .collect()
}

pub fn merge_all(
    dataset: &VectorDataset,
    subgraphs: Vec<Subgraph>,
    cfg: &PipelineConfig,
) -> Result<MergeOutcome> {
    let members: Vec<Vec<VectorId>> = subgraphs.iter().map(|g| g.members.clone()).collect();
    let plan = plan_merge_tree(&members)?;
    execute_merge_plan(
        &plan,
        subgraphs,
        dataset,
        &cfg.merge_params(),
        &MergeOptions {
            workers: cfg.workers,
            memory_budget: cfg.memory_budget,
        },
    )
}

/// Reads `subgraph_0000.graph ..` for `count` subsets.
pub fn read_subgraphs(dir: &Path, count: usize) -> Result<Vec<Subgraph>> {
    (0..count)
        .map(|i| Subgraph::read(subgraph_path(dir, i)))
        .collect()
}

/// One report per beam width for the final graph.
pub fn evaluate(
    dataset: &VectorDataset,
    queries: &VectorDataset,
    truth: &GroundTruth,
    plan: &PartitionPlan,
    schedule: &WorkerSchedule,
    outcome: &MergeOutcome,
    cfg: &PipelineConfig,
) -> Result<Vec<EvalReport>> {
    let connectivity = connectivity_check(&outcome.graph)?;
    let avg_overlap = overlap_stats(plan).avg_overlap;
    let build_cost_total = build_tasks(plan).iter().map(|t| t.cost).sum();
    cfg.beams
        .iter()
        .map(|&beam| {
            Ok(EvalReport {
                k: cfg.k,
                beam,
                recall_at_k: graph_recall(&outcome.graph, dataset, queries, truth, cfg.k, beam)?,
                avg_overlap,
                build_cost_total,
                simulated_makespan: makespan(schedule),
                merge_depth: outcome.depth,
                connectivity,
                wall_times: Vec::new(),
            })
        })
        .collect()
}

/// Text written to `report.txt`: the report at the widest beam, then the
/// per-beam table.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(last) = reports.last() {
        out.push_str(&last.to_string());
    }
    out.push('\n');
    out.push_str(&beam_table(reports));
    out
}

/// In-memory results of [`run_pipeline`].
#[derive(Debug)]
pub struct PipelineRun {
    pub plan: PartitionPlan,
    pub schedule: WorkerSchedule,
    pub codes: Option<PqCodes>,
    pub outcome: MergeOutcome,
    pub reports: Vec<EvalReport>,
}

pub fn write_subgraphs(dir: &Path, graphs: &[Subgraph]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    for (i, g) in graphs.iter().enumerate() {
        g.write(subgraph_path(dir, i))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs every stage and persists its output under `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.out_dir);
    art.create()?;
    let mut times = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, times: &mut Vec<(String, f64)>| {
        times.push((name.to_string(), clock.elapsed().as_secs_f64()));
        log::info!("stage {name} done in {:.2?}", clock.elapsed());
        clock = Instant::now();
    };

    let (base, queries) = load_data(cfg)?;
    io::write_fvecs(art.base(), &base)?;
    io::write_fvecs(art.queries(), &queries)?;
    lap("load", &mut times);

    let (plan, pq) = partition_and_quantize(&base, cfg)?;
    plan.write(cfg.plan_path())?;
    let codes = match pq {
        Some((codebook, codes)) => {
            codebook.write(art.codebook())?;
            codes.write(art.codes())?;
            log::info!(
                "encoded {} vectors with {} encode calls",
                codes.len(),
                codes.encode_calls
            );
            Some(codes)
        }
        None => None,
    };
    let stats = overlap_stats(&plan);
    log::info!(
        "partition: {} subsets, avg overlap {:.3}, sizes {}..{}",
        plan.phi(),
        stats.avg_overlap,
        stats.min_subset,
        stats.max_subset
    );
    lap("partition", &mut times);

    let schedule = schedule_builds(&plan, cfg.workers)?;
    write_text(&art.schedule(), &schedule.to_string())?;
    let subgraphs = build_all(&base, &plan, &schedule, &cfg.build_params())?;
    write_subgraphs(&cfg.graphs_dir(), &subgraphs)?;
    lap("build", &mut times);

    let outcome = merge_all(&base, subgraphs, cfg)?;
    outcome.graph.write(cfg.graph_path())?;
    write_text(&art.merge_report(), &outcome.report())?;
    lap("merge", &mut times);

    let truth = ground_truth(&base, &queries, cfg.k)?;
    io::write_ivecs(art.ground_truth(), &truth)?;
    let mut reports = evaluate(&base, &queries, &truth, &plan, &schedule, &outcome, cfg)?;
    lap("eval", &mut times);
    for r in &mut reports {
        r.wall_times = times.clone();
    }
    write_text(&art.report(), &render_reports(&reports))?;
    Ok(PipelineRun {
        plan,
        schedule,
        codes,
        outcome,
        reports,
    })
}
