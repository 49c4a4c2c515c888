//! The reducer: dispatches query chunks stage by stage and merges the
//! survivors reported by terminal nodes into each query's heap.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{bad_param, Error, Result};
use crate::pipeline::{EngineConfig, PruneState, PruneStats};
use crate::planner::PartitionPlan;
use crate::router::{group_by_shard, split_query, LoadTracker, VisitOrder};
use crate::topk::TopKResult;
use crate::vector::VectorBatch;

use super::message::{Control, Message, Payload};

/// Final state handed back once every query has completed.
#[derive(Debug, Clone)]
pub struct ReducerOutcome {
    pub results: Vec<TopKResult>,
    pub stats: PruneStats,
    pub node_floats: Vec<u64>,
    pub orders: Vec<VisitOrder>,
}

#[derive(Debug)]
pub struct ReducerState<'a> {
    id: u32,
    plan: &'a PartitionPlan,
    queries: &'a VectorBatch,
    config: &'a EngineConfig,
    eager_threshold: bool,
    states: Vec<PruneState>,
    shard_maps: Vec<BTreeMap<usize, Vec<u32>>>,
    orders: Vec<Option<VisitOrder>>,
    tracker: LoadTracker,
    arrivals: u64,
    query_work: Vec<Vec<f64>>,
    remaining: Vec<usize>,
    active: BTreeMap<u32, BTreeSet<u16>>,
    batch: usize,
    stage: usize,
    in_stage: usize,
    finished: bool,
    stats: PruneStats,
    node_floats: Vec<u64>,
    seq: Vec<u64>,
}

impl<'a> ReducerState<'a> {
    /// `states` are the prewarmed heaps, `probes` the probed lists per query.
    pub fn new(
        plan: &'a PartitionPlan,
        queries: &'a VectorBatch,
        config: &'a EngineConfig,
        probes: &[Vec<u32>],
        states: Vec<PruneState>,
        eager_threshold: bool,
    ) -> Result<Self> {
        let nq = queries.count();
        if states.len() != nq || probes.len() != nq {
            return Err(bad_param("one heap and one probe list per query required"));
        }
        if nq > u32::MAX as usize {
            return Err(bad_param("too many queries for the wire format"));
        }
        let shard_maps: Vec<_> = probes.iter().map(|p| group_by_shard(p, plan)).collect();
        let n = plan.node_count();
        Ok(Self {
            id: n as u32,
            plan,
            queries,
            config,
            eager_threshold,
            states,
            remaining: shard_maps.iter().map(BTreeMap::len).collect(),
            shard_maps,
            orders: vec![None; nq],
            tracker: LoadTracker::new(n),
            arrivals: 0,
            query_work: vec![vec![0.0; n]; nq],
            active: BTreeMap::new(),
            batch: config
                .batch_size
                .unwrap_or(nq.div_ceil(plan.n_vec()))
                .max(1),
            stage: 0,
            in_stage: 0,
            finished: false,
            stats: PruneStats::new(plan.n_dim()),
            node_floats: vec![0; n],
            seq: vec![0; n + 1],
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Queries with at least one unit still outstanding.
    pub fn incomplete(&self) -> usize {
        self.remaining.iter().filter(|&&r| r > 0).count()
    }

    fn emit(&mut self, out: &mut Vec<Message>, dst: u32, payload: &Payload) {
        let seq = &mut self.seq[dst as usize];
        out.push(Message::new(self.id, dst, *seq, payload));
        *seq += 1;
    }

    /// Messages that open the first non-empty stage.
    pub fn start(&mut self) -> Result<Vec<Message>> {
        let mut out = Vec::new();
        self.stage = 0;
        self.advance(&mut out)?;
        Ok(out)
    }

    /// Dispatches stages from `self.stage` on until one has work, or shuts
    /// the workers down when none is left.
    fn advance(&mut self, out: &mut Vec<Message>) -> Result<()> {
        let n_vec = self.plan.n_vec();
        while self.in_stage == 0 {
            if self.stage >= n_vec {
                self.finished = true;
                for node in 0..self.plan.node_count() as u32 {
                    self.emit(out, node, &Payload::Control(Control::Shutdown));
                }
                return Ok(());
            }
            self.dispatch_stage(out)?;
            self.stage += 1;
        }
        Ok(())
    }

    fn dispatch_stage(&mut self, out: &mut Vec<Message>) -> Result<()> {
        let plan = self.plan;
        let prune = self.config.pruning && self.config.metric.supports_pruning();
        for qi in 0..self.queries.count() {
            let shard = self
                .config
                .schedule
                .shard_for(qi / self.batch, self.stage, plan.n_vec());
            let Some(lists) = self.shard_maps[qi].get(&shard) else {
                continue;
            };
            let qid = self.queries.id(qi);
            if self.orders[qi].is_none() {
                let o = self
                    .config
                    .order
                    .order(qid, self.tracker.loads(), plan, self.arrivals);
                self.arrivals += 1;
                self.orders[qi] = Some(o);
            }
            let order = self.orders[qi].clone().expect("set above");
            let tau_sq = if prune {
                self.states[qi].tau_sq()
            } else {
                f64::INFINITY
            };
            let single: BTreeMap<usize, Vec<u32>> = [(shard, lists.clone())].into();
            let order_bytes: Vec<u8> = order.blocks().iter().map(|&b| b as u8).collect();
            for chunk in split_query(qid, self.queries.row(qi), plan, &single, &order)? {
                let node = plan.node_of(shard, chunk.dim_block_id);
                let payload = Payload::QueryChunk {
                    query: qi as u32,
                    shard: shard as u16,
                    order_index: chunk.order_index as u8,
                    order: order_bytes.clone(),
                    tau_sq,
                    probes: chunk.probe_lists,
                    values: chunk.block_values,
                };
                self.emit(out, node, &payload);
            }
            self.active
                .entry(qi as u32)
                .or_default()
                .insert(shard as u16);
            self.in_stage += 1;
        }
        Ok(())
    }

    pub fn step(&mut self, msg: &Message) -> Result<Vec<Message>> {
        if msg.dst != self.id {
            return Err(Error::Protocol(format!(
                "reducer received a message for {}",
                msg.dst
            )));
        }
        let Payload::TopKPartial {
            query,
            shard,
            last,
            work,
            entries,
            ..
        } = msg.decode()?
        else {
            return Err(Error::Protocol(format!(
                "reducer cannot handle {:?}",
                msg.kind
            )));
        };
        let qi = query as usize;
        if qi >= self.states.len() || !self.active.get(&query).is_some_and(|s| s.contains(&shard)) {
            return Err(Error::Protocol(format!(
                "result for inactive unit ({query}, {shard})"
            )));
        }
        let stages = self.plan.n_dim();
        if let Some(first) = work.first() {
            self.stats.candidates += first.computed as u64;
        }
        for (j, w) in work.iter().enumerate() {
            if j >= stages || w.node as usize >= self.node_floats.len() {
                return Err(Error::Protocol("malformed work report".into()));
            }
            self.stats.computed_at_stage[j] += w.computed as u64;
            if j + 1 < stages {
                self.stats.pruned_after_stage[j] += (w.computed - w.kept.min(w.computed)) as u64;
            }
            self.node_floats[w.node as usize] += w.floats as u64;
            self.query_work[qi][w.node as usize] += w.floats as f64;
        }

        let before = self.states[qi].tau_sq();
        for (id, d) in entries {
            self.states[qi].offer(id, d);
        }
        let mut out = Vec::new();
        if last {
            let shards = self.active.get_mut(&query).expect("checked above");
            shards.remove(&shard);
            if shards.is_empty() {
                self.active.remove(&query);
            }
            self.remaining[qi] -= 1;
            if self.remaining[qi] == 0 {
                let w = std::mem::take(&mut self.query_work[qi]);
                self.tracker.observe(&w);
            }
            self.in_stage -= 1;
        }
        let tau = self.states[qi].tau_sq();
        if self.eager_threshold && self.config.pruning && tau < before {
            let targets: Vec<u32> = self
                .active
                .get(&query)
                .into_iter()
                .flatten()
                .flat_map(|&s| (0..stages).map(move |b| (s as usize, b)))
                .map(|(s, b)| self.plan.node_of(s, b))
                .collect();
            for node in targets {
                self.emit(
                    &mut out,
                    node,
                    &Payload::ThresholdUpdate { query, tau_sq: tau },
                );
            }
        }
        if self.in_stage == 0 && !self.finished {
            self.advance(&mut out)?;
        }
        Ok(out)
    }

    pub fn into_outcome(self) -> ReducerOutcome {
        let metric = self.config.metric;
        let n_dim = self.plan.n_dim();
        let queries = self.queries;
        ReducerOutcome {
            results: self
                .states
                .into_iter()
                .map(|s| s.into_result(metric))
                .collect(),
            stats: self.stats,
            node_floats: self.node_floats,
            orders: self
                .orders
                .into_iter()
                .enumerate()
                .map(|(qi, o)| o.unwrap_or_else(|| VisitOrder::identity(queries.id(qi), n_dim)))
                .collect(),
        }
    }
}
