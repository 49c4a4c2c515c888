//! Measurement: ground truth, recall, synthetic data and skewed workloads,
//! pruning-ratio reports, and end-to-end benchmark runs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bad_param, check_dim, Error, Result};
use crate::index::{exact_topk, exact_topk_in_lists, probe_centroids, ClusterIndex};
use crate::kernel::{l2_sq, Metric};
use crate::pipeline::{Engine, EngineConfig, PruneStats};
use crate::planner::{
    plan_for_mode, CostCoefficients, PartitionPlan, PlanMode, PlanScore, WorkloadProfile,
};
use crate::runtime::{sim_run, socket_run, MessageKind, SimConfig, Topology, TrafficLedger};
use crate::topk::TopKResult;
use crate::vector::VectorBatch;

/// True neighbor ids per query, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub neighbors: Vec<Vec<u64>>,
}

impl GroundTruth {
    pub fn new(neighbors: Vec<Vec<u64>>) -> Result<Self> {
        if let Some(first) = neighbors.first() {
            if neighbors.iter().any(|n| n.len() != first.len()) {
                return Err(Error::WidthMismatch(
                    "ground truth rows differ in length".into(),
                ));
            }
        }
        Ok(Self { neighbors })
    }

    /// From an ivecs file's rows; negative ids are rejected.
    pub fn from_ivecs(rows: Vec<Vec<i32>>) -> Result<Self> {
        let neighbors = rows
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|v| {
                        u64::try_from(v).map_err(|_| Error::Format(format!("negative id {v}")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Self::new(neighbors)
    }

    /// Exact neighbors over the whole base.
    pub fn compute(base: &VectorBatch, queries: &VectorBatch, k: usize) -> Result<Self> {
        check_dim(base.dim(), queries.dim())?;
        let neighbors = (0..queries.count())
            .into_par_iter()
            .map(|qi| exact_topk(base, queries.row(qi), k).map(|r| r.ids()))
            .collect::<Result<_>>()?;
        Self::new(neighbors)
    }

    /// Exact neighbors restricted to each query's probed lists.
    pub fn within_probes(
        base: &VectorBatch,
        index: &ClusterIndex,
        queries: &VectorBatch,
        nprobe: usize,
        k: usize,
        metric: Metric,
    ) -> Result<Self> {
        let neighbors = (0..queries.count())
            .into_par_iter()
            .map(|qi| {
                let q = queries.row(qi);
                let probes = probe_centroids(q, index, nprobe)?;
                exact_topk_in_lists(base, index, &probes, q, k, metric).map(|r| r.ids())
            })
            .collect::<Result<_>>()?;
        Self::new(neighbors)
    }

    pub fn width(&self) -> usize {
        self.neighbors.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn to_ivecs(&self) -> Vec<Vec<i32>> {
        self.neighbors
            .iter()
            .map(|r| r.iter().map(|&id| id as i32).collect())
            .collect()
    }
}

/// Mean over queries of `|result ∩ truth[..k]| / k`.
pub fn recall_at_k(results: &[Vec<u64>], truth: &GroundTruth, k: usize) -> Result<f64> {
    if k == 0 || k > truth.width() {
        return Err(Error::WidthMismatch(format!(
            "k = {k} but ground truth has width {}",
            truth.width()
        )));
    }
    if results.len() != truth.len() {
        return Err(Error::WidthMismatch(format!(
            "{} results for {} ground-truth rows",
            results.len(),
            truth.len()
        )));
    }
    if results.is_empty() {
        return Ok(1.0);
    }
    let hits: usize = results
        .iter()
        .zip(&truth.neighbors)
        .map(|(r, t)| {
            let t = &t[..k];
            r.iter().take(k).filter(|id| t.contains(id)).count()
        })
        .sum();
    Ok(hits as f64 / (k * results.len()) as f64)
}

pub fn result_ids(results: &[TopKResult]) -> Vec<Vec<u64>> {
    results.iter().map(TopKResult::ids).collect()
}

/// Isotropic standard normal vectors with sequential ids.
pub fn gaussian(n: usize, dim: usize, seed: u64) -> Result<VectorBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim)
        .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal))
        .collect();
    VectorBatch::with_sequential_ids(dim, data)
}

/// Points around `centers` random centers: centers are standard normal,
/// points add independent normal noise of standard deviation `spread`.
pub fn gaussian_mixture(
    n: usize,
    dim: usize,
    centers: usize,
    spread: f32,
    seed: u64,
) -> Result<VectorBatch> {
    if centers == 0 {
        return Err(bad_param("a mixture needs at least one center"));
    }
    let noise = Normal::new(0.0f32, spread).map_err(|e| bad_param(format!("spread: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<f32> = (0..centers * dim)
        .map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal))
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..centers);
        for j in 0..dim {
            data.push(mu[c * dim + j] + noise.sample(&mut rng));
        }
    }
    VectorBatch::with_sequential_ids(dim, data)
}

/// Base and query sets drawn from one mixture, so queries land near the
/// base clusters. Query ids start at 0.
pub fn mixture_dataset(
    n_base: usize,
    n_query: usize,
    dim: usize,
    centers: usize,
    spread: f32,
    seed: u64,
) -> Result<(VectorBatch, VectorBatch)> {
    let all = gaussian_mixture(n_base + n_query, dim, centers, spread, seed)?;
    let split = n_base * dim;
    let base = VectorBatch::with_sequential_ids(dim, all.data()[..split].to_vec())?;
    let queries = VectorBatch::with_sequential_ids(dim, all.data()[split..].to_vec())?;
    Ok((base, queries))
}

/// Median distance from a centroid to its nearest other centroid.
fn centroid_spacing(index: &ClusterIndex) -> f64 {
    let n = index.nlist();
    if n < 2 {
        return 1.0;
    }
    let mut nearest: Vec<f64> = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| b != a)
                .map(|b| l2_sq(index.centroid(a), index.centroid(b)))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nearest.sort_by(f64::total_cmp);
    nearest[n / 2]
}

/// Queries near centroids whose cluster ids follow Zipf(`s`); rank 1 is
/// cluster 0. `s = 0` is uniform. Each query is its centroid plus normal
/// noise whose norm is about a quarter of the typical centroid spacing.
pub fn zipf_workload(
    index: &ClusterIndex,
    q_count: usize,
    s: f64,
    seed: u64,
) -> Result<VectorBatch> {
    if !s.is_finite() || s < 0.0 {
        return Err(bad_param(format!("Zipf exponent must be >= 0, got {s}")));
    }
    let n = index.nlist();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let dim = index.dim();
    let zipf = Zipf::new(n as f64, s).map_err(|e| bad_param(format!("zipf: {e}")))?;
    let sigma = 0.25 * centroid_spacing(index) / (dim as f64).sqrt();
    let noise = Normal::new(0.0, sigma).map_err(|e| bad_param(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(q_count * dim);
    for _ in 0..q_count {
        let c = (zipf.sample(&mut rng) as usize).clamp(1, n) - 1;
        for &x in index.centroid(c) {
            data.push((x as f64 + noise.sample(&mut rng)) as f32);
        }
    }
    VectorBatch::with_sequential_ids(dim, data)
}

/// How often each cluster is probed by `queries` at `nprobe`.
pub fn probe_histogram(
    index: &ClusterIndex,
    queries: &VectorBatch,
    nprobe: usize,
) -> Result<Vec<u64>> {
    let mut hits = vec![0u64; index.nlist()];
    for qi in 0..queries.count() {
        for c in probe_centroids(queries.row(qi), index, nprobe)? {
            hits[c as usize] += 1;
        }
    }
    Ok(hits)
}

/// Cumulative share of candidates pruned before each slice is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Percent, slice 1 first.
    pub slices: Vec<f64>,
    /// Mean of `slices`.
    pub average: f64,
}

impl PruneReport {
    pub fn from_stats(stats: &PruneStats) -> Self {
        let n = stats.stages();
        let mut slices = Vec::with_capacity(n);
        let mut pruned = 0u64;
        for k in 0..n {
            if k > 0 {
                pruned += stats.pruned_after_stage[k - 1];
            }
            slices.push(if stats.candidates == 0 {
                0.0
            } else {
                100.0 * pruned as f64 / stats.candidates as f64
            });
        }
        let average = if n == 0 {
            0.0
        } else {
            slices.iter().sum::<f64>() / n as f64
        };
        Self { slices, average }
    }

    /// `r_1 == 0` and ratios never decrease.
    pub fn is_well_formed(&self) -> bool {
        self.slices.first().is_none_or(|&r| r == 0.0)
            && self.slices.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn last(&self) -> f64 {
        self.slices.last().copied().unwrap_or(0.0)
    }
}

pub fn prune_report(stats: &PruneStats) -> PruneReport {
    PruneReport::from_stats(stats)
}

const SLICE_NAMES: [&str; 4] = ["First", "Second", "Third", "Fourth"];

/// CSV with one row per dataset, laid out as slice columns then the average.
pub fn prune_table_csv(rows: &[(String, PruneReport)]) -> String {
    let width = rows.iter().map(|(_, r)| r.slices.len()).max().unwrap_or(0);
    let mut out = String::from("Dataset");
    for k in 0..width {
        match SLICE_NAMES.get(k) {
            Some(name) => write!(out, ",{name} Slice (%)").unwrap(),
            None => write!(out, ",Slice {} (%)", k + 1).unwrap(),
        }
    }
    out.push_str(",Average Pruning Ratio (%)\n");
    for (name, r) in rows {
        out.push_str(name);
        for k in 0..width {
            match r.slices.get(k) {
                Some(v) => write!(out, ",{v:.2}").unwrap(),
                None => out.push(','),
            }
        }
        writeln!(out, ",{:.2}", r.average).unwrap();
    }
    out
}

/// Population standard deviation and variance of per-node work.
pub fn work_spread(node_work: &[u64]) -> (f64, f64) {
    if node_work.is_empty() {
        return (0.0, 0.0);
    }
    let n = node_work.len() as f64;
    let mean = node_work.iter().map(|&w| w as f64).sum::<f64>() / n;
    let var = node_work
        .iter()
        .map(|&w| (w as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    (var.sqrt(), var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// In-process engine; no messages.
    Local,
    /// Discrete-event simulator.
    #[default]
    Sim,
    /// Loopback TCP cluster.
    Socket,
}

impl Transport {
    pub fn name(self) -> &'static str {
        match self {
            Transport::Local => "local",
            Transport::Sim => "sim",
            Transport::Socket => "socket",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchKnobs {
    pub n_machine: usize,
    pub mode: PlanMode,
    /// Imbalance weight; `None` uses the node count.
    pub alpha: Option<f64>,
    pub engine: EngineConfig,
    pub sim: SimConfig,
    pub transport: Transport,
    /// Cost coefficients for plan selection; `None` derives them from the
    /// simulator's link model so runs stay deterministic.
    pub coeffs: Option<CostCoefficients>,
}

impl Default for BenchKnobs {
    fn default() -> Self {
        Self {
            n_machine: 4,
            mode: PlanMode::Hybrid,
            alpha: None,
            engine: EngineConfig::default(),
            sim: SimConfig::default(),
            transport: Transport::Sim,
            coeffs: None,
        }
    }
}

impl BenchKnobs {
    /// With weight `N`, the penalty is on the same scale as the summed
    /// query cost: a node `I` above the mean stretches the makespan by about
    /// `I`, and the summed cost is `N` times the mean load.
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.n_machine as f64)
    }

    pub fn coefficients(&self) -> Result<CostCoefficients> {
        match self.coeffs {
            Some(c) => Ok(c),
            None => CostCoefficients::from_link(
                self.sim.ns_per_float,
                self.sim.bandwidth_bytes_per_us,
                16.0,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindTotals {
    pub kind: MessageKind,
    pub bytes: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub mode: PlanMode,
    pub transport: Transport,
    pub n_vec: usize,
    pub n_dim: usize,
    pub queries: usize,
    pub k: usize,
    pub nprobe: usize,
    pub pruning: bool,
    pub recall: f64,
    pub qps: f64,
    /// What `qps` measures: simulated time, wall clock, or nothing.
    pub qps_basis: String,
    pub prune: PruneReport,
    pub node_work: Vec<u64>,
    pub work_stddev: f64,
    pub work_variance: f64,
    pub traffic: Vec<KindTotals>,
    pub plan_scores: Vec<PlanScore>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dataset      {}", self.dataset).unwrap();
        writeln!(
            out,
            "plan         {} ({} shards x {} blocks), transport {}",
            self.mode.name(),
            self.n_vec,
            self.n_dim,
            self.transport.name()
        )
        .unwrap();
        writeln!(
            out,
            "queries      {} (k = {}, nprobe = {})",
            self.queries, self.k, self.nprobe
        )
        .unwrap();
        writeln!(out, "recall@k     {:.4}", self.recall).unwrap();
        writeln!(out, "qps          {:.1} ({})", self.qps, self.qps_basis).unwrap();
        let slices: Vec<String> = self
            .prune
            .slices
            .iter()
            .map(|r| format!("{r:.2}"))
            .collect();
        writeln!(
            out,
            "pruning      {} | avg {:.2}%",
            slices.join(" / "),
            self.prune.average
        )
        .unwrap();
        writeln!(
            out,
            "node work    stddev {:.1}, variance {:.1}",
            self.work_stddev, self.work_variance
        )
        .unwrap();
        for t in &self.traffic {
            writeln!(
                out,
                "traffic      {:?}: {} bytes in {} messages",
                t.kind, t.bytes, t.count
            )
            .unwrap();
        }
        out
    }
}

fn traffic(ledger: &TrafficLedger) -> Vec<KindTotals> {
    MessageKind::ALL
        .iter()
        .map(|&kind| KindTotals {
            kind,
            bytes: ledger.bytes_of(kind),
            count: ledger.count_of(kind),
        })
        .collect()
}

/// Picks a plan for `knobs.mode`, using the queries' own probes as the workload.
pub fn choose_plan(
    index: &ClusterIndex,
    queries: &VectorBatch,
    knobs: &BenchKnobs,
) -> Result<(PartitionPlan, Vec<PlanScore>)> {
    let probes = (0..queries.count())
        .map(|qi| probe_centroids(queries.row(qi), index, knobs.engine.nprobe))
        .collect::<Result<Vec<_>>>()?;
    let workload = WorkloadProfile::from_probes(index.dim(), index.list_sizes(), probes)?;
    let sel = plan_for_mode(
        knobs.mode,
        knobs.n_machine,
        &workload,
        &knobs.coefficients()?,
        knobs.alpha(),
    )?;
    Ok((sel.plan, sel.scores))
}

/// Runs one configuration end to end and measures it.
pub fn bench_run(
    dataset: &str,
    base: &VectorBatch,
    index: &ClusterIndex,
    queries: &VectorBatch,
    truth: &GroundTruth,
    knobs: &BenchKnobs,
) -> Result<BenchReport> {
    let (plan, plan_scores) = choose_plan(index, queries, knobs)?;
    bench_with_plan(
        dataset,
        base,
        index,
        queries,
        truth,
        knobs,
        &plan,
        plan_scores,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn bench_with_plan(
    dataset: &str,
    base: &VectorBatch,
    index: &ClusterIndex,
    queries: &VectorBatch,
    truth: &GroundTruth,
    knobs: &BenchKnobs,
    plan: &PartitionPlan,
    plan_scores: Vec<PlanScore>,
) -> Result<BenchReport> {
    let cfg = &knobs.engine;
    let (results, stats, node_work, qps, basis, ledger) = match knobs.transport {
        Transport::Local => {
            let out = Engine::new(base, index, plan)?.search(queries, cfg)?;
            (
                out.results,
                out.stats,
                out.node_floats,
                0.0,
                "none (in-process engine)",
                None,
            )
        }
        Transport::Sim => {
            let topo = Topology::new(base, index, plan)?;
            let sim = SimConfig {
                nodes: plan.node_count(),
                ..knobs.sim.clone()
            };
            let out = sim_run(&sim, &topo, queries, cfg)?;
            let qps = out.simulated_qps();
            (
                out.results,
                out.stats,
                out.node_floats,
                qps,
                "simulated time",
                Some(out.ledger),
            )
        }
        Transport::Socket => {
            let topo = Topology::new(base, index, plan)?;
            let out = socket_run(&topo, queries, cfg, knobs.sim.eager_threshold)?;
            let qps = out.wall_qps();
            (
                out.results,
                out.stats,
                out.node_floats,
                qps,
                "wall clock",
                Some(out.ledger),
            )
        }
    };
    let k = cfg.k.min(truth.width());
    let recall = recall_at_k(&result_ids(&results), truth, k)?;
    let (work_stddev, work_variance) = work_spread(&node_work);
    Ok(BenchReport {
        dataset: dataset.to_string(),
        mode: knobs.mode,
        transport: knobs.transport,
        n_vec: plan.n_vec(),
        n_dim: plan.n_dim(),
        queries: queries.count(),
        k: cfg.k,
        nprobe: cfg.nprobe,
        pruning: cfg.pruning,
        recall,
        qps,
        qps_basis: basis.to_string(),
        prune: prune_report(&stats),
        node_work,
        work_stddev,
        work_variance,
        traffic: ledger.as_ref().map(traffic).unwrap_or_default(),
        plan_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_examples() {
        let truth = GroundTruth::new(vec![(0..10).collect(), (10..20).collect()]).unwrap();
        assert_eq!(recall_at_k(&truth.neighbors, &truth, 10).unwrap(), 1.0);
        let disjoint = vec![(100..110).collect(), (200..210).collect()];
        assert_eq!(recall_at_k(&disjoint, &truth, 10).unwrap(), 0.0);
        let half = vec![(5..15).collect(), (15..25).collect()];
        assert_eq!(recall_at_k(&half, &truth, 10).unwrap(), 0.5);
        assert!(matches!(
            recall_at_k(&half, &truth, 11),
            Err(Error::WidthMismatch(_))
        ));
    }

    #[test]
    fn prune_report_from_counts() {
        let stats = PruneStats {
            candidates: 100,
            pruned_after_stage: vec![10, 30, 20, 0],
            computed_at_stage: vec![100, 90, 60, 40],
        };
        let r = prune_report(&stats);
        assert_eq!(r.slices, vec![0.0, 10.0, 40.0, 60.0]);
        assert_eq!(r.average, 27.5);
        assert!(r.is_well_formed());
        let none = prune_report(&PruneStats::new(4));
        assert_eq!(none.slices, vec![0.0; 4]);
    }

    #[test]
    fn table_layout() {
        let r = PruneReport {
            slices: vec![0.0, 41.76, 85.04, 98.4],
            average: 56.3,
        };
        let csv = prune_table_csv(&[("desk".into(), r)]);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Dataset,First Slice (%),Second Slice (%),Third Slice (%),Fourth Slice (%),Average Pruning Ratio (%)"
        );
        assert_eq!(lines.next().unwrap(), "desk,0.00,41.76,85.04,98.40,56.30");
    }

    #[test]
    fn spread_of_equal_work_is_zero() {
        assert_eq!(work_spread(&[5, 5, 5]), (0.0, 0.0));
        let (sd, var) = work_spread(&[2, 4, 4, 4, 5, 5, 7, 9]);
        assert_eq!((sd, var), (2.0, 4.0));
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(gaussian(10, 4, 3).unwrap(), gaussian(10, 4, 3).unwrap());
        assert_ne!(gaussian(10, 4, 3).unwrap(), gaussian(10, 4, 4).unwrap());
        let m = gaussian_mixture(50, 8, 5, 0.5, 1).unwrap();
        assert_eq!((m.count(), m.dim()), (50, 8));
        assert!(zipf_workload(&ClusterIndex::from_centroids(m.truncated(4)), 3, -1.0, 0).is_err());
    }
}
