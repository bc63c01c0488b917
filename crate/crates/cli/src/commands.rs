use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use shardgraph::config::{ConfigMap, PipelineConfig};
use shardgraph::eval::ground_truth;
use shardgraph::graph::{GraphView, Subgraph};
use shardgraph::io;
use shardgraph::merge::{plan_merge_tree, MergeOutcome};
use shardgraph::partition::{deviation_report, overlap_stats, partition, PartitionPlan};
use shardgraph::pipeline::{
    build_all, evaluate, merge_all, quantize, read_subgraphs, read_vectors, render_reports,
    run_pipeline, schedule_builds, synth_data, write_subgraphs, write_text,
};
use shardgraph::VectorDataset;

use crate::{Command, Common, GraphArgs};

/// `(config key, flag, value)` triples from command-line flags.
#[derive(Default)]
struct Overrides(Vec<(&'static str, &'static str, String)>);

impl Overrides {
    fn add<T: ToString>(
        &mut self,
        key: &'static str,
        flag: &'static str,
        value: &Option<T>,
    ) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, flag, v.to_string()));
        }
        self
    }

    fn path(
        &mut self,
        key: &'static str,
        flag: &'static str,
        value: &Option<std::path::PathBuf>,
    ) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, flag, v.display().to_string()));
        }
        self
    }

    fn common(&mut self, c: &Common) -> &mut Self {
        self.path("out_dir", "--out-dir", &c.out_dir)
            .add("seed", "--seed", &c.seed)
            .add("workers", "--workers", &c.workers)
    }

    fn graph(&mut self, g: &GraphArgs) -> &mut Self {
        self.add("r", "--r", &g.r)
            .add("l_build", "--l-build", &g.l_build)
            .add("alpha", "--alpha", &g.alpha)
    }
}

/// Config file first, then flags on top; a flag that replaces a different
/// file value is logged.
fn resolve(common: &Common, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut map = match &common.config {
        Some(path) => ConfigMap::read(path).context("reading config")?,
        None => ConfigMap::default(),
    };
    for (key, flag, value) in &overrides.0 {
        if let Some(prev) = map.set(key, value.clone())? {
            if &prev != value {
                log::warn!("{flag} {value} overrides config value `{key} = {prev}`");
            }
        }
    }
    Ok(PipelineConfig::from_map(&map)?)
}

fn load_base(cfg: &PipelineConfig) -> Result<VectorDataset> {
    Ok(read_vectors(&cfg.base_path())?)
}

fn load_plan(cfg: &PipelineConfig, base: &VectorDataset) -> Result<PartitionPlan> {
    let plan = PartitionPlan::read(cfg.plan_path())?;
    if plan.n != base.len() {
        bail!(
            "plan {} covers {} vectors but the base set has {}",
            cfg.plan_path().display(),
            plan.n,
            base.len()
        );
    }
    Ok(plan)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .add("synth_n", "--n", &a.n)
                .add("synth_dim", "--dim", &a.dim)
                .add("synth_clusters", "--clusters", &a.clusters)
                .add("synth_spread", "--spread", &a.spread)
                .add("queries_n", "--queries-n", &a.queries_n);
            let cfg = resolve(&a.common, &o)?;
            synth(&cfg).context("synth stage")
        }
        Command::Partition(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .path("input", "--input", &a.input)
                .add("omega", "--omega", &a.omega)
                .add("epsilon", "--epsilon", &a.epsilon)
                .add("gamma", "--gamma", &a.gamma)
                .add("subsets", "--subsets", &a.subsets)
                .add("sample_size", "--sample-size", &a.sample_size)
                .add("kmeans_iters", "--kmeans-iters", &a.kmeans_iters)
                .path("plan", "--plan", &a.plan);
            let cfg = resolve(&a.common, &o)?;
            cmd_partition(&cfg).context("partition stage")
        }
        Command::Quantize(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .path("input", "--input", &a.input)
                .add("pq_m", "--pq-m", &a.pq_m)
                .add("pq_ks", "--pq-ks", &a.pq_ks);
            let cfg = resolve(&a.common, &o)?;
            cmd_quantize(&cfg).context("quantize stage")
        }
        Command::Schedule(a) => {
            let mut o = Overrides::default();
            o.common(&a.common).path("plan", "--plan", &a.plan);
            let cfg = resolve(&a.common, &o)?;
            cmd_schedule(&cfg).context("schedule stage")
        }
        Command::Build(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .graph(&a.graph)
                .path("input", "--input", &a.input)
                .path("plan", "--plan", &a.plan)
                .path("graphs", "--graphs", &a.graphs);
            let cfg = resolve(&a.common, &o)?;
            cmd_build(&cfg).context("build stage")
        }
        Command::Merge(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .graph(&a.graph)
                .path("input", "--input", &a.input)
                .path("plan", "--plan", &a.plan)
                .path("graphs", "--graphs", &a.graphs)
                .path("graph", "--out", &a.out)
                .add("memory_budget", "--memory-budget", &a.memory_budget);
            let cfg = resolve(&a.common, &o)?;
            cmd_merge(&cfg).context("merge stage")
        }
        Command::Search(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .path("input", "--input", &a.input)
                .path("graph", "--graph", &a.graph)
                .path("queries", "--query", &a.query)
                .add("k", "--k", &a.k)
                .add("beams", "--beam", &a.beam);
            let cfg = resolve(&a.common, &o)?;
            cmd_search(&cfg).context("search stage")
        }
        Command::Eval(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .path("input", "--input", &a.input)
                .path("queries", "--query", &a.query)
                .path("plan", "--plan", &a.plan)
                .path("graph", "--graph", &a.graph)
                .add("k", "--k", &a.k)
                .add("beams", "--beams", &a.beams);
            let cfg = resolve(&a.common, &o)?;
            cmd_eval(&cfg).context("eval stage")
        }
        Command::Pipeline(a) => {
            let mut o = Overrides::default();
            o.common(&a.common)
                .graph(&a.graph)
                .path("input", "--input", &a.input)
                .path("queries", "--query", &a.query)
                .add("omega", "--omega", &a.omega)
                .add("epsilon", "--epsilon", &a.epsilon)
                .add("gamma", "--gamma", &a.gamma)
                .add("pq_m", "--pq-m", &a.pq_m);
            let cfg = resolve(&a.common, &o)?;
            let run = run_pipeline(&cfg).context("pipeline")?;
            print!("{}", render_reports(&run.reports));
            Ok(())
        }
    }
}

fn synth(cfg: &PipelineConfig) -> Result<()> {
    let (base, queries) = synth_data(cfg)?;
    let art = cfg.artifacts();
    create_dir(art.root())?;
    io::write_fvecs(art.base(), &base)?;
    io::write_fvecs(art.queries(), &queries)?;
    println!(
        "wrote {} base and {} query vectors of dim {} to {}",
        base.len(),
        queries.len(),
        base.dim(),
        art.root().display()
    );
    Ok(())
}

fn cmd_partition(cfg: &PipelineConfig) -> Result<()> {
    let base = load_base(cfg)?;
    let plan = partition(&base, &cfg.partition_params(base.len()))?;
    let path = cfg.plan_path();
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    plan.write(&path)?;
    let stats = overlap_stats(&plan);
    let dev = deviation_report(&base, &plan);
    log::info!(
        "{} vectors left their nearest subset; max deviation angle {:?} degrees",
        dev.relocated,
        dev.max()
    );
    println!(
        "subsets={} gamma={} avg_overlap={:.4} min_subset={} max_subset={}",
        plan.phi(),
        plan.params.gamma,
        stats.avg_overlap,
        stats.min_subset,
        stats.max_subset
    );
    Ok(())
}

fn cmd_quantize(cfg: &PipelineConfig) -> Result<()> {
    if cfg.pq_m.is_none() {
        bail!("product quantization needs --pq-m (config key `pq_m`)");
    }
    let base = load_base(cfg)?;
    let (codebook, codes) = quantize(&base, cfg)?.expect("pq_m is set");
    let art = cfg.artifacts();
    create_dir(art.root())?;
    codebook.write(art.codebook())?;
    codes.write(art.codes())?;
    println!(
        "encoded {} vectors, encode_calls={}",
        codes.len(),
        codes.encode_calls
    );
    Ok(())
}

fn cmd_schedule(cfg: &PipelineConfig) -> Result<()> {
    let plan = PartitionPlan::read(cfg.plan_path())?;
    let schedule = schedule_builds(&plan, cfg.workers)?;
    let art = cfg.artifacts();
    create_dir(art.root())?;
    write_text(&art.schedule(), &schedule.to_string())?;
    print!("{schedule}");
    Ok(())
}

fn cmd_build(cfg: &PipelineConfig) -> Result<()> {
    let base = load_base(cfg)?;
    let plan = load_plan(cfg, &base)?;
    let schedule = schedule_builds(&plan, cfg.workers)?;
    let graphs = build_all(&base, &plan, &schedule, &cfg.build_params())?;
    write_subgraphs(&cfg.graphs_dir(), &graphs)?;
    println!(
        "built {} subgraphs into {}",
        graphs.len(),
        cfg.graphs_dir().display()
    );
    Ok(())
}

fn cmd_merge(cfg: &PipelineConfig) -> Result<()> {
    let base = load_base(cfg)?;
    let plan = load_plan(cfg, &base)?;
    let graphs = read_subgraphs(&cfg.graphs_dir(), plan.phi())?;
    let outcome = merge_all(&base, graphs, cfg)?;
    outcome.graph.write(cfg.graph_path())?;
    let art = cfg.artifacts();
    create_dir(art.root())?;
    write_text(&art.merge_report(), &outcome.report())?;
    print!("{}", outcome.report());
    Ok(())
}

fn cmd_search(cfg: &PipelineConfig) -> Result<()> {
    let base = load_base(cfg)?;
    let queries = read_vectors(&cfg.queries_path())?;
    let graph = Subgraph::read(cfg.graph_path())?;
    base.check_ids(&graph.members)?;
    let view = GraphView::new(&graph)?;
    let beam = *cfg.beams.iter().max().expect("beams is nonempty");
    let mut scratch = view.scratch();
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for q in queries.rows() {
        let res = view.search(&base, q, beam, cfg.k, &mut scratch)?;
        let ids: Vec<String> = res.ids.iter().map(ToString::to_string).collect();
        writeln!(out, "{}", ids.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_eval(cfg: &PipelineConfig) -> Result<()> {
    let base = load_base(cfg)?;
    let queries = read_vectors(&cfg.queries_path())?;
    let plan = load_plan(cfg, &base)?;
    let graph = Subgraph::read(cfg.graph_path())?;
    base.check_ids(&graph.members)?;
    let schedule = schedule_builds(&plan, cfg.workers)?;
    let outcome = MergeOutcome {
        graph,
        records: Vec::new(),
        depth: plan_merge_tree(&plan.subsets)?.depth,
    };
    let truth = ground_truth(&base, &queries, cfg.k)?;
    let art = cfg.artifacts();
    create_dir(art.root())?;
    io::write_ivecs(art.ground_truth(), &truth)?;
    let reports = evaluate(&base, &queries, &truth, &plan, &schedule, &outcome, cfg)?;
    let text = render_reports(&reports);
    write_text(&art.report(), &text)?;
    print!("{text}");
    Ok(())
}
