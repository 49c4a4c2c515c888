//! Pipelined search with distributed partial-distance pruning.
//!
//! Execution for a batch of queries:
//!
//! 1. **Prewarm.** Each query's heap is seeded with exact distances to a
//!    seeded sample of vectors from its nearest probed lists, giving a finite
//!    threshold before any node runs.
//! 2. **Vector pipeline.** Queries are split into groups of `batch_size`.
//!    In stage `a`, group `g` is processed against shard `(g + a) mod n_vec`,
//!    so every stage keeps all shards busy and later stages inherit the
//!    thresholds tightened by earlier ones.
//! 3. **Dimension pipeline.** Inside one (query, shard) unit the probed lists
//!    are processed one at a time. Each list's candidates pass through the
//!    dimension blocks in the query's visit order; after every block the
//!    running squared distance is compared with the current threshold and
//!    candidates above it are dropped. Survivors of the last block carry
//!    exact distances and go into the heap, tightening the threshold for the
//!    next list.
//!
//! Thresholds only ever decrease and every threshold is the k-th distance of
//! K real candidates, so no candidate of the true top-K (over the probed
//! lists) is ever dropped.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bad_param, check_dim, Error, Result};
use crate::index::{probe_centroids, ClusterIndex};
use crate::kernel::{block_score, l2_sq, should_prune, DimBlockSpec, Metric, PartialAccumulator};
use crate::planner::PartitionPlan;
use crate::router::{group_by_shard, LoadTracker, OrderPolicy, VisitOrder};
use crate::topk::{Neighbor, TopKHeap, TopKResult};
use crate::vector::VectorBatch;

/// Per-query heap plus the threshold derived from it.
#[derive(Debug, Clone)]
pub struct PruneState {
    heap: TopKHeap,
    tau_sq: f64,
    epoch: u64,
}

impl PruneState {
    pub fn new(k: usize) -> Self {
        Self {
            heap: TopKHeap::new(k),
            tau_sq: f64::INFINITY,
            epoch: 0,
        }
    }

    pub fn tau_sq(&self) -> f64 {
        self.tau_sq
    }

    /// Bumped every time the threshold tightens.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn heap(&self) -> &TopKHeap {
        &self.heap
    }

    /// Offers an exact distance; returns whether the heap changed.
    pub fn offer(&mut self, id: u64, distance: f64) -> bool {
        let changed = self.heap.push(id, distance);
        if changed {
            self.refresh();
        }
        changed
    }

    fn refresh(&mut self) {
        let t = self.heap.threshold();
        if t < self.tau_sq {
            self.tau_sq = t;
            self.epoch += 1;
        }
    }

    pub fn into_result(self, metric: Metric) -> TopKResult {
        self.heap.into_result(metric)
    }

    pub fn result(&self, metric: Metric) -> TopKResult {
        self.heap.clone().into_result(metric)
    }
}

/// Deterministic per-query sampling seed.
pub fn query_seed(seed: u64, query_id: u64) -> u64 {
    seed ^ query_id.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// Ids sampled for one query's prewarm: a seeded uniform sample taken from
/// the nearest probed list first, then the next ones, up to `sample_size`.
pub fn prewarm_sample(
    index: &ClusterIndex,
    probes: &[u32],
    sample_size: usize,
    seed: u64,
) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::with_capacity(sample_size);
    for &c in probes {
        let need = sample_size - ids.len();
        if need == 0 {
            break;
        }
        let list = index.list(c as usize);
        let take = need.min(list.len());
        let mut picked: Vec<usize> = sample(&mut rng, list.len(), take).into_vec();
        picked.sort_unstable();
        ids.extend(picked.into_iter().map(|i| list[i]));
    }
    ids
}

/// Builds each query's initial heap from sampled vectors of its probed lists.
///
/// The nearest centroid only chooses where sampling starts: a centroid is
/// not a base vector, so its distance never enters the heap.
#[allow(clippy::too_many_arguments)]
pub fn prewarm_heap(
    queries: &VectorBatch,
    base: &VectorBatch,
    index: &ClusterIndex,
    probes: &[Vec<u32>],
    sample_size: usize,
    k: usize,
    metric: Metric,
    seed: u64,
) -> Result<Vec<PruneState>> {
    if k == 0 {
        return Err(bad_param("k must be at least 1"));
    }
    check_dim(base.dim(), queries.dim())?;
    (0..queries.count())
        .map(|qi| {
            let q = queries.row(qi);
            let mut state = PruneState::new(k);
            for id in prewarm_sample(
                index,
                &probes[qi],
                sample_size,
                query_seed(seed, queries.id(qi)),
            ) {
                let v = base
                    .get(id)
                    .ok_or_else(|| bad_param(format!("list id {id} missing from base")))?;
                state.offer(id, metric.rank_key(block_score(metric, q, v)));
            }
            Ok(state)
        })
        .collect()
}

/// Counters for the dimension pipeline. Stage `j` is the `j`-th block in a
/// query's visit order, not a fixed block id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PruneStats {
    /// Candidates that entered stage 0.
    pub candidates: u64,
    /// `pruned_after_stage[j]`: candidates dropped right after stage `j`.
    pub pruned_after_stage: Vec<u64>,
    /// Partial distances evaluated per stage.
    pub computed_at_stage: Vec<u64>,
}

impl PruneStats {
    pub fn new(stages: usize) -> Self {
        Self {
            candidates: 0,
            pruned_after_stage: vec![0; stages],
            computed_at_stage: vec![0; stages],
        }
    }

    pub fn stages(&self) -> usize {
        self.pruned_after_stage.len()
    }

    pub fn merge(&mut self, other: &PruneStats) {
        if self.stages() < other.stages() {
            self.pruned_after_stage.resize(other.stages(), 0);
            self.computed_at_stage.resize(other.stages(), 0);
        }
        self.candidates += other.candidates;
        for (a, b) in self
            .pruned_after_stage
            .iter_mut()
            .zip(&other.pruned_after_stage)
        {
            *a += b;
        }
        for (a, b) in self
            .computed_at_stage
            .iter_mut()
            .zip(&other.computed_at_stage)
        {
            *a += b;
        }
    }

    pub fn total_pruned(&self) -> u64 {
        self.pruned_after_stage.iter().sum()
    }
}

/// One query's work on one vector shard.
#[derive(Debug, Clone, Copy)]
pub struct ShardUnit<'a> {
    pub query_id: u64,
    pub query: &'a [f32],
    pub shard: usize,
    /// Probed lists owned by the shard, nearest first.
    pub lists: &'a [u32],
}

/// Mutable bookkeeping threaded through the dimension pipeline.
#[derive(Debug)]
pub struct UnitSink<'a> {
    pub stats: &'a mut PruneStats,
    /// Floats computed per dimension block.
    pub block_floats: &'a mut [u64],
    /// Receives `(query_id, candidate_id)` for every pruned candidate.
    pub pruned: Option<&'a mut Vec<(u64, u64)>>,
}

/// Runs one (query, shard) unit through the dimension blocks in `order`,
/// inserting survivors into `state`. Returns the survivors with their exact
/// ranking keys.
#[allow(clippy::too_many_arguments)]
pub fn dimension_pipeline(
    unit: ShardUnit<'_>,
    base: &VectorBatch,
    index: &ClusterIndex,
    spec: &DimBlockSpec,
    order: &VisitOrder,
    metric: Metric,
    pruning: bool,
    state: &mut PruneState,
    sink: &mut UnitSink<'_>,
) -> Result<Vec<Neighbor>> {
    check_dim(spec.dim(), unit.query.len())?;
    if order.len() != spec.block_count() {
        return Err(bad_param("visit order does not match the block spec"));
    }
    let prune = pruning && metric.supports_pruning();
    let stages = order.len();
    let mut survivors_all = Vec::new();

    for &list in unit.lists {
        let ids = index.list(list as usize);
        let mut cands: Vec<(usize, PartialAccumulator, f64)> = Vec::with_capacity(ids.len());
        for &id in ids {
            let row = base
                .row_of(id)
                .ok_or_else(|| bad_param(format!("list id {id} missing from base")))?;
            cands.push((row, PartialAccumulator::new(unit.query_id, id), 0.0));
        }
        sink.stats.candidates += cands.len() as u64;

        for (stage, &block) in order.blocks().iter().enumerate() {
            // Re-read every stage: the threshold may have tightened since.
            let tau = if prune { state.tau_sq() } else { f64::INFINITY };
            let range = spec.range(block);
            let qb = &unit.query[range.clone()];
            sink.stats.computed_at_stage[stage] += cands.len() as u64;
            sink.block_floats[block] += (cands.len() * range.len()) as u64;
            let last = stage + 1 == stages;

            let mut keep = 0;
            for i in 0..cands.len() {
                let (row, ref mut acc, ref mut raw) = cands[i];
                let partial = block_score(metric, qb, &base.row(row)[range.clone()]);
                if metric == Metric::L2 {
                    acc.accumulate(block, partial)?;
                } else {
                    *raw += partial;
                }
                if !last && prune && should_prune(acc, tau) {
                    acc.mark_pruned();
                    sink.stats.pruned_after_stage[stage] += 1;
                    if let Some(log) = sink.pruned.as_deref_mut() {
                        log.push((unit.query_id, acc.candidate_id));
                    }
                    continue;
                }
                cands.swap(keep, i);
                keep += 1;
            }
            cands.truncate(keep);
        }

        for (_, acc, raw) in cands {
            let key = match metric {
                Metric::L2 => acc.s_sq(),
                Metric::InnerProduct => metric.rank_key(raw),
            };
            state.offer(acc.candidate_id, key);
            survivors_all.push(Neighbor::new(acc.candidate_id, key));
        }
    }
    Ok(survivors_all)
}

/// Global k best of several partial results; duplicate ids keep the smaller distance.
pub fn merge_topk(partials: &[TopKResult], k: usize) -> Result<TopKResult> {
    if k == 0 {
        return Err(bad_param("k must be at least 1"));
    }
    let metric = partials.first().map_or(Metric::L2, |p| p.metric);
    if partials.iter().any(|p| p.metric != metric) {
        return Err(Error::MetricMismatch);
    }
    let all = partials
        .iter()
        .flat_map(|p| p.entries.iter().copied())
        .collect();
    Ok(TopKResult::from_candidates(k, metric, all))
}

/// Work items assigned to nodes in one dimension stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stage: usize,
    /// `node -> [(query, shard, block)]`.
    pub assignments: BTreeMap<u32, Vec<(u64, usize, usize)>>,
}

impl StagePlan {
    /// Stage `stage` of every `(query, shard, order)` unit.
    pub fn build(stage: usize, units: &[(u64, usize, &VisitOrder)], plan: &PartitionPlan) -> Self {
        let mut assignments: BTreeMap<u32, Vec<(u64, usize, usize)>> = BTreeMap::new();
        for &(q, shard, order) in units {
            if let Some(&block) = order.blocks().get(stage) {
                assignments
                    .entry(plan.node_of(shard, block))
                    .or_default()
                    .push((q, shard, block));
            }
        }
        Self { stage, assignments }
    }

    /// Each (query, shard) appears at most once per stage, and every item sits
    /// on the node that owns its block.
    pub fn is_legal(&self, plan: &PartitionPlan) -> bool {
        let mut seen = HashSet::new();
        self.assignments.iter().all(|(&node, items)| {
            items.iter().all(|&(q, shard, block)| {
                plan.node_of(shard, block) == node && seen.insert((q, shard))
            })
        })
    }
}

/// Order in which query groups visit shards in the vector pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShardSchedule {
    /// Group `g` visits shard `(g + a) mod n_vec` in stage `a`.
    #[default]
    Forward,
    /// Group `g` visits shard `(g - a) mod n_vec` in stage `a`.
    Backward,
}

impl ShardSchedule {
    pub fn shard_for(self, group: usize, stage: usize, n_vec: usize) -> usize {
        match self {
            ShardSchedule::Forward => (group + stage) % n_vec,
            ShardSchedule::Backward => (group + n_vec - stage % n_vec) % n_vec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub k: usize,
    pub nprobe: usize,
    pub pruning: bool,
    /// Vectors sampled per query for the prewarm heap; `None` means `2k`.
    pub prewarm_sample: Option<usize>,
    pub order: OrderPolicy,
    pub metric: Metric,
    /// Queries per vector-pipeline group; `None` means `ceil(Q / n_vec)`.
    pub batch_size: Option<usize>,
    pub schedule: ShardSchedule,
    pub seed: u64,
    /// Record every pruned candidate for post-hoc auditing.
    pub record_pruned: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: 10,
            nprobe: 8,
            pruning: true,
            prewarm_sample: None,
            order: OrderPolicy::LoadAware,
            metric: Metric::L2,
            batch_size: None,
            schedule: ShardSchedule::Forward,
            seed: 0,
            record_pruned: false,
        }
    }
}

impl EngineConfig {
    pub fn prewarm_size(&self) -> usize {
        self.prewarm_sample.unwrap_or(2 * self.k)
    }

    pub fn validate(&self, index: &ClusterIndex, plan: &PartitionPlan) -> Result<()> {
        if self.k == 0 {
            return Err(bad_param("k must be at least 1"));
        }
        if self.nprobe == 0 || self.nprobe > index.nlist() {
            return Err(bad_param(format!(
                "nprobe must be in 1..={}, got {}",
                index.nlist(),
                self.nprobe
            )));
        }
        if self.batch_size == Some(0) {
            return Err(bad_param("batch size must be at least 1"));
        }
        plan.validate_for(index.nlist(), index.dim())?;
        self.order.validate(plan.n_dim())
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutput {
    pub results: Vec<TopKResult>,
    pub stats: PruneStats,
    /// Floats computed per node.
    pub node_floats: Vec<u64>,
    pub orders: Vec<VisitOrder>,
    pub probes: Vec<Vec<u32>>,
    /// `(query_id, candidate_id)` of pruned candidates, when recorded.
    pub pruned: Vec<(u64, u64)>,
}

/// In-process executor of the pipelined search over a partition plan.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub base: &'a VectorBatch,
    pub index: &'a ClusterIndex,
    pub plan: &'a PartitionPlan,
}

impl<'a> Engine<'a> {
    pub fn new(
        base: &'a VectorBatch,
        index: &'a ClusterIndex,
        plan: &'a PartitionPlan,
    ) -> Result<Self> {
        check_dim(index.dim(), base.dim())?;
        plan.validate_for(index.nlist(), index.dim())?;
        Ok(Self { base, index, plan })
    }

    pub fn probe_all(&self, queries: &VectorBatch, nprobe: usize) -> Result<Vec<Vec<u32>>> {
        (0..queries.count())
            .map(|qi| probe_centroids(queries.row(qi), self.index, nprobe))
            .collect()
    }

    pub fn search(&self, queries: &VectorBatch, config: &EngineConfig) -> Result<SearchOutput> {
        config.validate(self.index, self.plan)?;
        check_dim(self.index.dim(), queries.dim())?;
        let plan = self.plan;
        let nq = queries.count();
        let probes = self.probe_all(queries, config.nprobe)?;
        let mut states = if config.pruning && config.metric.supports_pruning() {
            prewarm_heap(
                queries,
                self.base,
                self.index,
                &probes,
                config.prewarm_size(),
                config.k,
                config.metric,
                config.seed,
            )?
        } else {
            (0..nq).map(|_| PruneState::new(config.k)).collect()
        };
        let shard_maps: Vec<BTreeMap<usize, Vec<u32>>> =
            probes.iter().map(|p| group_by_shard(p, plan)).collect();

        let n_vec = plan.n_vec();
        let batch = config.batch_size.unwrap_or(nq.div_ceil(n_vec)).max(1);
        let mut stats = PruneStats::new(plan.n_dim());
        let mut node_floats = vec![0u64; plan.node_count()];
        let mut pruned = Vec::new();
        let mut tracker = LoadTracker::new(plan.node_count());
        let mut orders: Vec<Option<VisitOrder>> = vec![None; nq];
        let mut remaining: Vec<usize> = shard_maps.iter().map(BTreeMap::len).collect();
        let mut query_floats: Vec<Vec<f64>> = vec![Vec::new(); nq];
        let mut arrivals = 0u64;

        for stage in 0..n_vec {
            for qi in 0..nq {
                let shard = config.schedule.shard_for(qi / batch, stage, n_vec);
                let Some(lists) = shard_maps[qi].get(&shard) else {
                    continue;
                };
                let qid = queries.id(qi);
                let order = orders[qi]
                    .get_or_insert_with(|| {
                        arrivals += 1;
                        config.order.order(qid, tracker.loads(), plan, arrivals - 1)
                    })
                    .clone();
                let mut block_floats = vec![0u64; plan.n_dim()];
                let mut sink = UnitSink {
                    stats: &mut stats,
                    block_floats: &mut block_floats,
                    pruned: config.record_pruned.then_some(&mut pruned),
                };
                let before = states[qi].tau_sq();
                dimension_pipeline(
                    ShardUnit {
                        query_id: qid,
                        query: queries.row(qi),
                        shard,
                        lists,
                    },
                    self.base,
                    self.index,
                    plan.dim_spec(),
                    &order,
                    config.metric,
                    config.pruning,
                    &mut states[qi],
                    &mut sink,
                )?;
                debug_assert!(states[qi].tau_sq() <= before);

                let per_node = &mut query_floats[qi];
                per_node.resize(plan.node_count(), 0.0);
                for (block, &f) in block_floats.iter().enumerate() {
                    let node = plan.node_of(shard, block) as usize;
                    node_floats[node] += f;
                    per_node[node] += f as f64;
                }
                remaining[qi] -= 1;
                if remaining[qi] == 0 {
                    tracker.observe(&query_floats[qi]);
                }
            }
        }

        let results = states
            .into_iter()
            .map(|s| s.into_result(config.metric))
            .collect();
        let orders = orders
            .into_iter()
            .enumerate()
            .map(|(qi, o)| o.unwrap_or_else(|| VisitOrder::identity(queries.id(qi), plan.n_dim())))
            .collect();
        Ok(SearchOutput {
            results,
            stats,
            node_floats,
            orders,
            probes,
            pruned,
        })
    }
}

/// Outcome of re-checking pruned candidates against exact distances.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PruneAudit {
    pub checked: usize,
    /// `(query_id, candidate_id)` pairs that should not have been pruned.
    pub violations: Vec<(u64, u64)>,
}

impl PruneAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Every pruned candidate's exact squared distance must exceed its query's
/// final k-th best distance. `results` is indexed like `queries`.
pub fn audit_pruned(
    base: &VectorBatch,
    queries: &VectorBatch,
    results: &[TopKResult],
    pruned: &[(u64, u64)],
) -> Result<PruneAudit> {
    let mut audit = PruneAudit::default();
    for &(qid, cid) in pruned {
        let qi = queries
            .row_of(qid)
            .ok_or_else(|| bad_param(format!("unknown query {qid}")))?;
        let v = base
            .get(cid)
            .ok_or_else(|| bad_param(format!("unknown candidate {cid}")))?;
        let result = &results[qi];
        let kth = if result.len() >= result.k {
            result.entries.last().map_or(f64::INFINITY, |n| n.distance)
        } else {
            f64::INFINITY
        };
        audit.checked += 1;
        if l2_sq(queries.row(qi), v) <= kth {
            audit.violations.push((qid, cid));
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::train_centroids;

    fn grid_base() -> VectorBatch {
        let mut rows = Vec::new();
        for i in 0..40 {
            rows.push([(i % 8) as f32, (i / 8) as f32, ((i * 7) % 5) as f32, 1.0]);
        }
        VectorBatch::from_rows(&rows).unwrap()
    }

    #[test]
    fn prune_state_tightens_monotonically() {
        let mut s = PruneState::new(2);
        assert_eq!(s.tau_sq(), f64::INFINITY);
        s.offer(1, 5.0);
        assert_eq!((s.tau_sq(), s.epoch()), (f64::INFINITY, 0));
        s.offer(2, 3.0);
        assert_eq!((s.tau_sq(), s.epoch()), (5.0, 1));
        s.offer(3, 9.0);
        assert_eq!((s.tau_sq(), s.epoch()), (5.0, 1));
        s.offer(4, 1.0);
        assert_eq!((s.tau_sq(), s.epoch()), (3.0, 2));
    }

    #[test]
    fn empty_prewarm_leaves_threshold_open() {
        let base = grid_base();
        let idx = train_centroids(&base, 4, 5, 1).unwrap();
        let q = base.truncated(3);
        let probes: Vec<Vec<u32>> = (0..3)
            .map(|i| probe_centroids(q.row(i), &idx, 2).unwrap())
            .collect();
        let states = prewarm_heap(&q, &base, &idx, &probes, 0, 3, Metric::L2, 1).unwrap();
        assert!(states.iter().all(|s| s.tau_sq() == f64::INFINITY));
    }

    #[test]
    fn prewarm_sample_is_deterministic_and_within_probes() {
        let base = grid_base();
        let idx = train_centroids(&base, 4, 5, 1).unwrap();
        let a = prewarm_sample(&idx, &[2, 0], 7, 42);
        assert_eq!(a, prewarm_sample(&idx, &[2, 0], 7, 42));
        let allowed: HashSet<u64> = idx.list(2).iter().chain(idx.list(0)).copied().collect();
        assert!(a.iter().all(|id| allowed.contains(id)));
        assert_eq!(a.len(), 7.min(allowed.len()));
    }

    #[test]
    fn merge_rules() {
        let a = TopKResult::from_candidates(
            3,
            Metric::L2,
            vec![Neighbor::new(1, 1.0), Neighbor::new(2, 4.0)],
        );
        assert_eq!(merge_topk(std::slice::from_ref(&a), 3).unwrap(), a);
        let b = TopKResult::from_candidates(
            3,
            Metric::L2,
            vec![Neighbor::new(2, 2.0), Neighbor::new(3, 3.0)],
        );
        let m = merge_topk(&[a.clone(), b], 3).unwrap();
        assert_eq!(m.ids(), vec![1, 2, 3]);
        assert_eq!(m.entries[1].distance, 2.0);
        let c = TopKResult::from_candidates(3, Metric::InnerProduct, vec![]);
        assert!(matches!(merge_topk(&[a, c], 3), Err(Error::MetricMismatch)));
    }

    #[test]
    fn shard_schedules_cover_every_shard() {
        for sched in [ShardSchedule::Forward, ShardSchedule::Backward] {
            for g in 0..3 {
                let mut seen: Vec<usize> = (0..3).map(|a| sched.shard_for(g, a, 3)).collect();
                seen.sort();
                assert_eq!(seen, vec![0, 1, 2]);
            }
        }
    }

    #[test]
    fn config_validation() {
        let base = grid_base();
        let idx = train_centroids(&base, 4, 5, 1).unwrap();
        let plan = PartitionPlan::build(2, 2, 4, &idx.list_sizes()).unwrap();
        let ok = EngineConfig {
            nprobe: 2,
            k: 3,
            ..Default::default()
        };
        assert!(ok.validate(&idx, &plan).is_ok());
        for bad in [
            EngineConfig { k: 0, ..ok.clone() },
            EngineConfig {
                nprobe: 5,
                ..ok.clone()
            },
            EngineConfig {
                batch_size: Some(0),
                ..ok.clone()
            },
            EngineConfig {
                order: OrderPolicy::Fixed(vec![0, 0]),
                ..ok.clone()
            },
        ] {
            assert!(bad.validate(&idx, &plan).is_err());
        }
    }
}
