use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gridann::bench::{
    bench_with_plan, choose_plan, mixture_dataset, prune_report, prune_table_csv, result_ids,
    zipf_workload, BenchKnobs, GroundTruth, Transport,
};
use gridann::index::{assign_to_lists, train_centroids, DEFAULT_KMEANS_ITERS};
use gridann::io::{load_index, read_ivecs, read_vectors, save_index, write_fvecs, write_ivecs};
use gridann::pipeline::{audit_pruned, Engine, EngineConfig};
use gridann::planner::{CostCoefficients, PartitionPlan, PlanMode};
use gridann::runtime::{sim_run, socket_run, SimConfig, Topology};
use gridann::{ClusterIndex, OrderPolicy, TopKResult, VectorBatch};

#[derive(Parser, Debug)]
#[command(
    name = "gridann",
    version,
    about = "Distributed inverted-file vector search with dimension-block pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic Gaussian-mixture dataset with exact ground truth.
    Generate(GenerateArgs),
    /// Train the index, fill the inverted lists and choose a partition plan.
    Build(BuildArgs),
    /// Choose a partition plan for an existing index.
    Plan(PlanArgs),
    /// Run queries and print the top-K neighbors.
    Query(QueryArgs),
    /// Measure recall, throughput, pruning and load balance.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Cost-model choice among all grid shapes.
    Hybrid,
    /// Whole vectors per node (one dimension block).
    Vector,
    /// Dimension blocks only (one vector shard).
    Dimension,
}

impl From<ModeArg> for PlanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Hybrid => PlanMode::Hybrid,
            ModeArg::Vector => PlanMode::Vector,
            ModeArg::Dimension => PlanMode::Dimension,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    #[value(alias = "true")]
    On,
    #[value(alias = "false")]
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    Local,
    Sim,
    Socket,
}

impl From<TransportArg> for Transport {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Local => Transport::Local,
            TransportArg::Sim => Transport::Sim,
            TransportArg::Socket => Transport::Socket,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ClusterArgs {
    /// Number of worker nodes.
    #[arg(long = "n-machine", alias = "NMachine", default_value_t = 4)]
    n_machine: usize,

    /// Partitioning mode.
    #[arg(long, alias = "Mode", value_enum, default_value_t = ModeArg::Hybrid)]
    mode: ModeArg,

    /// Weight of the load-imbalance term in plan selection [default: the node count].
    #[arg(long)]
    alpha: Option<f64>,

    /// Cost coefficients `comp_dim,comm_dim,comp_vec,comm_vec` in ms per unit
    /// [default: derived from the simulator link model].
    #[arg(long)]
    coeffs: Option<String>,

    /// Measure cost coefficients on this machine instead.
    #[arg(long, conflicts_with = "coeffs")]
    calibrate: bool,
}

impl ClusterArgs {
    fn coefficients(&self) -> Result<Option<CostCoefficients>> {
        if self.calibrate {
            return Ok(Some(CostCoefficients::calibrate()));
        }
        let Some(text) = &self.coeffs else {
            return Ok(None);
        };
        let v: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("--coeffs expects four numbers, got {text:?}"))?;
        ensure!(
            v.len() == 4,
            "--coeffs expects four numbers, got {}",
            v.len()
        );
        Ok(Some(CostCoefficients::new(v[0], v[1], v[2], v[3])?))
    }
}

/// `nlist=64,nprobe=8,dim=128`; every key is optional.
#[derive(Debug, Clone, Default, PartialEq)]
struct IndexingParams {
    nlist: Option<usize>,
    nprobe: Option<usize>,
    dim: Option<usize>,
}

fn parse_indexing(text: &str) -> Result<IndexingParams, String> {
    let mut p = IndexingParams::default();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
        let n: usize = value
            .trim()
            .parse()
            .map_err(|_| format!("{key} must be a positive integer, got {value:?}"))?;
        match key.trim() {
            "nlist" => p.nlist = Some(n),
            "nprobe" => p.nprobe = Some(n),
            "dim" => p.dim = Some(n),
            other => {
                return Err(format!(
                    "unknown indexing parameter {other:?} (nlist, nprobe, dim)"
                ))
            }
        }
    }
    Ok(p)
}

fn parse_order(text: &str) -> Result<OrderPolicy, String> {
    match text {
        "load-aware" => Ok(OrderPolicy::LoadAware),
        "round-robin" => Ok(OrderPolicy::RoundRobin),
        _ => {
            let list = text.strip_prefix("fixed:").ok_or_else(|| {
                format!("expected load-aware, round-robin or fixed:<blocks>, got {text:?}")
            })?;
            list.split(',')
                .map(|b| {
                    b.trim()
                        .parse::<usize>()
                        .map_err(|_| format!("bad block {b:?}"))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(OrderPolicy::Fixed)
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    /// Neighbors per query.
    #[arg(short, long, default_value_t = 10)]
    k: usize,

    /// Inverted lists probed per query.
    #[arg(long, default_value_t = 8)]
    nprobe: usize,

    /// Partial-distance pruning; a bare flag means on.
    #[arg(
        long,
        alias = "Pruning_Configuration",
        value_enum,
        num_args = 0..=1,
        default_value_t = Toggle::On,
        default_missing_value = "on"
    )]
    pruning: Toggle,

    /// Overrides as `nlist=..,nprobe=..,dim=..`.
    #[arg(long = "indexing-parameters", alias = "Indexing_Parameters", value_parser = parse_indexing)]
    indexing_parameters: Option<IndexingParams>,

    /// Block visit order: load-aware, round-robin or fixed:<b0,b1,..>.
    #[arg(long, default_value = "load-aware", value_parser = parse_order)]
    order: OrderPolicy,

    /// Vectors sampled per query to seed the heap [default: 2k].
    #[arg(long)]
    prewarm: Option<usize>,

    /// Seed for prewarm sampling and the simulator.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SearchArgs {
    fn nprobe(&self) -> usize {
        self.indexing_parameters
            .as_ref()
            .and_then(|p| p.nprobe)
            .unwrap_or(self.nprobe)
    }

    fn engine_config(&self, index: &ClusterIndex) -> Result<EngineConfig> {
        if let Some(d) = self.indexing_parameters.as_ref().and_then(|p| p.dim) {
            ensure!(
                d == index.dim(),
                "--indexing-parameters dim={d} but the index has dim {}",
                index.dim()
            );
        }
        if let Some(n) = self.indexing_parameters.as_ref().and_then(|p| p.nlist) {
            ensure!(
                n == index.nlist(),
                "--indexing-parameters nlist={n} but the index has {} lists",
                index.nlist()
            );
        }
        let nprobe = self.nprobe();
        ensure!(
            (1..=index.nlist()).contains(&nprobe),
            "--nprobe must be between 1 and {} (the index's nlist), got {nprobe}",
            index.nlist()
        );
        ensure!(self.k >= 1, "-k must be at least 1");
        Ok(EngineConfig {
            k: self.k,
            nprobe,
            pruning: self.pruning == Toggle::On,
            prewarm_sample: self.prewarm,
            order: self.order.clone(),
            seed: self.seed,
            ..EngineConfig::default()
        })
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output directory for base.fvecs, query.fvecs and groundtruth.ivecs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    /// Mixture components.
    #[arg(long, default_value_t = 100)]
    centers: usize,
    /// Standard deviation around each component center.
    #[arg(long, default_value_t = 0.5)]
    spread: f32,
    /// Ground-truth neighbors per query.
    #[arg(long = "gt-k", default_value_t = 100)]
    gt_k: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Base vectors (.fvecs or .bvecs).
    #[arg(long)]
    base: PathBuf,
    /// Read at most this many base vectors.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 64)]
    nlist: usize,
    /// Train k-means on the first N base vectors only.
    #[arg(long = "train-size")]
    train_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERS)]
    iters: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory for index.bin and plan.json.
    #[arg(long)]
    out: PathBuf,
    /// Queries whose probes define the planning workload [default: a sample of the base].
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Lists probed per query when profiling the workload.
    #[arg(long, default_value_t = 8)]
    nprobe: usize,
    #[arg(long = "indexing-parameters", alias = "Indexing_Parameters", value_parser = parse_indexing)]
    indexing_parameters: Option<IndexingParams>,
    #[command(flatten)]
    cluster: ClusterArgs,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Index dump written by `build`.
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    nprobe: usize,
    /// Where to write the plan JSON [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cluster: ClusterArgs,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Plan JSON [default: plan.json next to the index].
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    queries: PathBuf,
    /// Use only the first N queries.
    #[arg(long)]
    limit: Option<usize>,
    /// Ground truth (.ivecs) for a recall line.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TransportArg::Sim)]
    transport: TransportArg,
    /// Write the simulator's event trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Query file; omit with --zipf to synthesize a skewed workload.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Synthesize queries whose clusters follow Zipf(S).
    #[arg(long)]
    zipf: Option<f64>,
    /// Queries to synthesize with --zipf.
    #[arg(long = "zipf-queries", default_value_t = 200)]
    zipf_queries: usize,
    #[arg(long, value_enum, default_value_t = TransportArg::Sim)]
    transport: TransportArg,
    /// Label used in reports.
    #[arg(long, default_value = "dataset")]
    name: String,
    /// JSON report path.
    #[arg(long = "out-json")]
    out_json: Option<PathBuf>,
    /// Pruning table (CSV) path.
    #[arg(long = "out-csv")]
    out_csv: Option<PathBuf>,
    #[command(flatten)]
    cluster: ClusterArgs,
    #[command(flatten)]
    search: SearchArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Build(a) => build(a),
        Command::Plan(a) => plan(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: invariant audit failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn generate(a: GenerateArgs) -> Result<bool> {
    ensure!(
        a.n > 0 && a.queries > 0,
        "--n and --queries must be positive"
    );
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (base, queries) = mixture_dataset(a.n, a.queries, a.dim, a.centers, a.spread, a.seed)?;
    let truth = GroundTruth::compute(&base, &queries, a.gt_k.min(a.n))?;
    write_fvecs(a.out.join("base.fvecs"), &base)?;
    write_fvecs(a.out.join("query.fvecs"), &queries)?;
    write_ivecs(a.out.join("groundtruth.ivecs"), &truth.to_ivecs())?;
    println!(
        "wrote {} base and {} query vectors (dim {}) to {}",
        base.count(),
        queries.count(),
        base.dim(),
        a.out.display()
    );
    Ok(true)
}

/// Probed lists of the planning workload: the given queries, or every
/// `n / 200`-th base vector when none are given.
fn workload_queries(
    index: &ClusterIndex,
    base: &VectorBatch,
    queries: Option<&Path>,
) -> Result<VectorBatch> {
    match queries {
        Some(p) => {
            let q = read_vectors(p, None).with_context(|| format!("reading {}", p.display()))?;
            ensure!(
                q.dim() == index.dim(),
                "queries have dim {}, index has {}",
                q.dim(),
                index.dim()
            );
            Ok(q)
        }
        None => {
            let step = (base.count() / 200).max(1);
            let rows: Vec<&[f32]> = (0..base.count())
                .step_by(step)
                .map(|r| base.row(r))
                .collect();
            Ok(VectorBatch::from_rows(&rows)?)
        }
    }
}

fn knobs_for(
    cluster: &ClusterArgs,
    engine: EngineConfig,
    transport: Transport,
) -> Result<BenchKnobs> {
    ensure!(cluster.n_machine >= 1, "--n-machine must be at least 1");
    if let Some(a) = cluster.alpha {
        ensure!(
            a.is_finite() && a >= 0.0,
            "--alpha must be a finite number >= 0, got {a}"
        );
    }
    Ok(BenchKnobs {
        n_machine: cluster.n_machine,
        mode: cluster.mode.into(),
        alpha: cluster.alpha,
        engine,
        sim: SimConfig::with_nodes(cluster.n_machine),
        transport,
        coeffs: cluster.coefficients()?,
    })
}

fn print_scores(plan: &PartitionPlan, scores: &[gridann::planner::PlanScore]) {
    for s in scores {
        let mark = if (s.n_vec, s.n_dim) == (plan.n_vec(), plan.n_dim()) {
            "*"
        } else {
            " "
        };
        println!(
            "{mark} plan {} x {}: query cost {:.4} ms, imbalance {:.4} ms, total {:.4} ms",
            s.n_vec, s.n_dim, s.query_cost, s.imbalance, s.total
        );
    }
}

fn build(a: BuildArgs) -> Result<bool> {
    let nlist = a
        .indexing_parameters
        .as_ref()
        .and_then(|p| p.nlist)
        .unwrap_or(a.nlist);
    let nprobe = a
        .indexing_parameters
        .as_ref()
        .and_then(|p| p.nprobe)
        .unwrap_or(a.nprobe);
    let base =
        read_vectors(&a.base, a.limit).with_context(|| format!("reading {}", a.base.display()))?;
    if let Some(d) = a.indexing_parameters.as_ref().and_then(|p| p.dim) {
        ensure!(
            d == base.dim(),
            "--indexing-parameters dim={d} but the base has dim {}",
            base.dim()
        );
    }
    ensure!(
        (1..=base.count()).contains(&nlist),
        "--nlist must be between 1 and the base size {}, got {nlist}",
        base.count()
    );
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let t = Instant::now();
    let sample = match a.train_size {
        Some(n) if n < base.count() => base.truncated(n.max(nlist)),
        _ => base.clone(),
    };
    let trained = train_centroids(&sample, nlist, a.iters, a.seed)?;
    let train_time = t.elapsed();

    let t = Instant::now();
    let index = assign_to_lists(&base, &trained)?;
    let add_time = t.elapsed();

    let t = Instant::now();
    let workload = workload_queries(&index, &base, a.queries.as_deref())?;
    let engine = EngineConfig {
        nprobe: nprobe.clamp(1, nlist),
        ..EngineConfig::default()
    };
    let knobs = knobs_for(&a.cluster, engine, Transport::Sim)?;
    let (plan, scores) = choose_plan(&index, &workload, &knobs)?;
    let topo = Topology::new(&base, &index, &plan)?;
    let preassign_time = t.elapsed();

    save_index(a.out.join("index.bin"), &index, &base)?;
    fs::write(a.out.join("plan.json"), plan.to_json())?;

    println!("Train       {:>10.3} ms", train_time.as_secs_f64() * 1e3);
    println!("Add         {:>10.3} ms", add_time.as_secs_f64() * 1e3);
    println!(
        "Pre-assign  {:>10.3} ms",
        preassign_time.as_secs_f64() * 1e3
    );
    println!(
        "index: {} vectors, dim {}, {} lists; plan {} shards x {} blocks",
        base.count(),
        base.dim(),
        index.nlist(),
        plan.n_vec(),
        plan.n_dim()
    );
    print_scores(&plan, &scores);
    let stored = topo.resident_floats();
    let expected = base.count() * base.dim();
    println!("resident floats {stored} (expected {expected})");
    Ok(stored == expected)
}

fn plan(a: PlanArgs) -> Result<bool> {
    let (index, base) = load_index(&a.index)?;
    let workload = workload_queries(&index, &base, a.queries.as_deref())?;
    let engine = EngineConfig {
        nprobe: a.nprobe.clamp(1, index.nlist()),
        ..EngineConfig::default()
    };
    let knobs = knobs_for(&a.cluster, engine, Transport::Sim)?;
    let (plan, scores) = choose_plan(&index, &workload, &knobs)?;
    let json = plan.to_json();
    match &a.out {
        Some(p) => {
            fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?;
            print_scores(&plan, &scores);
        }
        None => println!("{json}"),
    }
    Ok(true)
}

fn load_queries(path: &Path, limit: Option<usize>, index: &ClusterIndex) -> Result<VectorBatch> {
    let q = read_vectors(path, limit).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        q.dim() == index.dim(),
        "queries have dim {}, index has {}",
        q.dim(),
        index.dim()
    );
    Ok(q)
}

fn load_truth(path: &Path, count: usize) -> Result<GroundTruth> {
    let rows =
        read_ivecs(path, Some(count)).with_context(|| format!("reading {}", path.display()))?;
    ensure!(
        rows.len() == count,
        "ground truth has {} rows for {count} queries",
        rows.len()
    );
    Ok(GroundTruth::from_ivecs(rows)?)
}

/// Structural checks every run must pass.
fn results_well_formed(results: &[TopKResult], k: usize) -> bool {
    results.iter().all(|r| r.is_well_formed() && r.len() <= k)
}

fn query(a: QueryArgs) -> Result<bool> {
    let (index, base) = load_index(&a.index)?;
    let plan_path = a
        .plan
        .clone()
        .unwrap_or_else(|| a.index.with_file_name("plan.json"));
    let plan_text = fs::read_to_string(&plan_path)
        .with_context(|| format!("reading {}", plan_path.display()))?;
    let plan = PartitionPlan::from_json(&plan_text)?;
    plan.validate_for(index.nlist(), index.dim())?;
    let queries = load_queries(&a.queries, a.limit, &index)?;
    let mut cfg = a.search.engine_config(&index)?;
    let audit_pruning = a.transport == TransportArg::Local && cfg.pruning;
    cfg.record_pruned = audit_pruning;

    if a.trace.is_some() && a.transport != TransportArg::Sim {
        bail!("--trace needs --transport sim");
    }

    let started = Instant::now();
    let (results, stats, audit_ok) = match a.transport {
        TransportArg::Local => {
            let out = Engine::new(&base, &index, &plan)?.search(&queries, &cfg)?;
            let audit = audit_pruned(&base, &queries, &out.results, &out.pruned)?;
            eprintln!(
                "pruning audit: {} candidates checked, {} violations",
                audit.checked,
                audit.violations.len()
            );
            (out.results, out.stats, audit.passed())
        }
        TransportArg::Sim => {
            let topo = Topology::new(&base, &index, &plan)?;
            let sim = SimConfig {
                seed: a.search.seed,
                ..SimConfig::with_nodes(plan.node_count())
            };
            let out = sim_run(&sim, &topo, &queries, &cfg)?;
            if let Some(p) = &a.trace {
                fs::write(p, out.trace.to_jsonl())
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            eprintln!(
                "simulated makespan {:.3} ms, {:.1} queries/s (simulated time)",
                out.makespan_ns as f64 / 1e6,
                out.simulated_qps()
            );
            (out.results, out.stats, true)
        }
        TransportArg::Socket => {
            let topo = Topology::new(&base, &index, &plan)?;
            let out = socket_run(&topo, &queries, &cfg, false)?;
            eprintln!(
                "wall time {:.3} ms, {:.1} queries/s (wall clock)",
                out.wall.as_secs_f64() * 1e3,
                out.wall_qps()
            );
            (out.results, out.stats, true)
        }
    };
    let elapsed = started.elapsed();

    for (qi, r) in results.iter().enumerate() {
        for n in &r.entries {
            println!("{} {} {:.6}", queries.id(qi), n.id, n.distance);
        }
    }
    let report = prune_report(&stats);
    let slices: Vec<String> = report.slices.iter().map(|r| format!("{r:.2}")).collect();
    eprintln!(
        "{} queries in {:.3} s; pruning by slice (%): {} (avg {:.2})",
        queries.count(),
        elapsed.as_secs_f64(),
        slices.join(" / "),
        report.average
    );
    if let Some(gt) = &a.gt {
        let truth = load_truth(gt, queries.count())?;
        let k = cfg.k.min(truth.width());
        let recall = gridann::bench::recall_at_k(&result_ids(&results), &truth, k)?;
        eprintln!("recall@{k} {recall:.4}");
    }
    Ok(audit_ok && results_well_formed(&results, cfg.k) && report.is_well_formed())
}

fn bench(a: BenchArgs) -> Result<bool> {
    let (index, base) = load_index(&a.index)?;
    let queries = match (&a.queries, a.zipf) {
        (_, Some(s)) => {
            ensure!(a.zipf_queries > 0, "--zipf-queries must be positive");
            zipf_workload(&index, a.zipf_queries, s, a.search.seed)?
        }
        (Some(p), None) => load_queries(p, a.limit, &index)?,
        (None, None) => bail!("bench needs --queries or --zipf"),
    };
    let cfg = a.search.engine_config(&index)?;
    let truth = match (&a.gt, a.zipf) {
        (Some(p), None) => load_truth(p, queries.count())?,
        _ => GroundTruth::compute(&base, &queries, cfg.k)?,
    };
    let mut knobs = knobs_for(&a.cluster, cfg, a.transport.into())?;
    knobs.sim.seed = a.search.seed;
    let (plan, scores) = choose_plan(&index, &queries, &knobs)?;
    let report = bench_with_plan(
        &a.name, &base, &index, &queries, &truth, &knobs, &plan, scores,
    )?;

    print!("{}", report.table());
    if let Some(p) = &a.out_json {
        fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.out_csv {
        let csv = prune_table_csv(&[(a.name.clone(), report.prune.clone())]);
        fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(report.prune.is_well_formed())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_parameters_parse() {
        let p = parse_indexing("nlist=64, nprobe=8,dim=128").unwrap();
        assert_eq!(
            p,
            IndexingParams {
                nlist: Some(64),
                nprobe: Some(8),
                dim: Some(128)
            }
        );
        assert!(parse_indexing("nlist").is_err());
        assert!(parse_indexing("depth=3").is_err());
        assert!(parse_indexing("nprobe=-1").is_err());
    }

    #[test]
    fn order_parse() {
        assert_eq!(parse_order("round-robin").unwrap(), OrderPolicy::RoundRobin);
        assert_eq!(
            parse_order("fixed:2,0,1").unwrap(),
            OrderPolicy::Fixed(vec![2, 0, 1])
        );
        assert!(parse_order("sideways").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
