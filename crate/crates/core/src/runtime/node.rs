//! Worker nodes: resident block data and the message-driven state machine.
//!
//! A (query, shard) unit runs as a chain over the nodes of the shard, in the
//! query's visit order. The first node starts each wave (one probed list)
//! from its own candidate list; every node adds its block's partial distance
//! and drops candidates above the threshold; the last node folds survivors
//! into a local heap, reports them to the reducer and asks the first node
//! for the next wave with the tightened threshold.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::index::ClusterIndex;
use crate::kernel::{block_score, Metric};
use crate::pipeline::PruneState;
use crate::planner::PartitionPlan;
use crate::vector::VectorBatch;

use super::message::{Control, Message, Payload, StageWork};

/// One inverted list's slice of a dimension block.
#[derive(Debug, Clone, PartialEq)]
pub struct ListSlice {
    pub ids: Vec<u64>,
    /// Row-major, `ids.len() * width` floats.
    pub data: Vec<f32>,
}

/// Everything node `(shard, block)` stores: block coordinates of the
/// vectors in the shard's lists.
#[derive(Debug, Clone)]
pub struct NodeData {
    pub node: u32,
    pub shard: usize,
    pub block: usize,
    pub range: Range<usize>,
    lists: BTreeMap<u32, ListSlice>,
    row_of: HashMap<u64, (u32, usize)>,
}

impl NodeData {
    pub fn build(
        node: u32,
        base: &VectorBatch,
        index: &ClusterIndex,
        plan: &PartitionPlan,
    ) -> Result<Self> {
        if node as usize >= plan.node_count() {
            return Err(Error::UnknownNode(node));
        }
        let (shard, block) = plan.cell_of(node);
        let range = plan.dim_spec().range(block);
        let mut lists = BTreeMap::new();
        let mut row_of = HashMap::new();
        for c in plan.lists_in_shard(shard) {
            let ids = index.list(c as usize).to_vec();
            let mut data = Vec::with_capacity(ids.len() * range.len());
            for (r, &id) in ids.iter().enumerate() {
                let v = base
                    .get(id)
                    .ok_or_else(|| Error::BadParam(format!("list id {id} missing from base")))?;
                data.extend_from_slice(&v[range.clone()]);
                row_of.insert(id, (c, r));
            }
            lists.insert(c, ListSlice { ids, data });
        }
        Ok(Self {
            node,
            shard,
            block,
            range,
            lists,
            row_of,
        })
    }

    pub fn width(&self) -> usize {
        self.range.len()
    }

    pub fn resident_floats(&self) -> usize {
        self.lists.values().map(|l| l.data.len()).sum()
    }

    pub fn list(&self, c: u32) -> Option<&ListSlice> {
        self.lists.get(&c)
    }

    fn row(&self, id: u64) -> Option<&[f32]> {
        let &(c, r) = self.row_of.get(&id)?;
        let w = self.width();
        Some(&self.lists[&c].data[r * w..(r + 1) * w])
    }
}

pub fn build_nodes(
    base: &VectorBatch,
    index: &ClusterIndex,
    plan: &PartitionPlan,
) -> Result<Vec<NodeData>> {
    (0..plan.node_count() as u32)
        .map(|n| NodeData::build(n, base, index, plan))
        .collect()
}

/// Search settings every worker needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerParams {
    pub k: usize,
    pub metric: Metric,
    pub pruning: bool,
    pub reducer: u32,
}

#[derive(Debug, Clone)]
struct Chunk {
    order: Vec<usize>,
    order_index: usize,
    tau_sq: f64,
    probes: Vec<u32>,
    values: Vec<f32>,
}

#[derive(Debug, Default)]
struct Unit {
    chunk: Option<Chunk>,
    buffered: Vec<Payload>,
    heap: Option<PruneState>,
}

/// Result of handling one message.
#[derive(Debug, Default)]
pub struct Step {
    pub out: Vec<Message>,
    pub floats: u64,
    pub shutdown: bool,
}

#[derive(Debug)]
pub struct WorkerState<'a> {
    data: &'a NodeData,
    plan: &'a PartitionPlan,
    params: WorkerParams,
    units: HashMap<(u32, u16), Unit>,
    tau_cache: HashMap<u32, f64>,
    seq: Vec<u64>,
}

impl<'a> WorkerState<'a> {
    pub fn new(data: &'a NodeData, plan: &'a PartitionPlan, params: WorkerParams) -> Self {
        Self {
            data,
            plan,
            params,
            units: HashMap::new(),
            tau_cache: HashMap::new(),
            seq: vec![0; plan.node_count() + 1],
        }
    }

    pub fn node(&self) -> u32 {
        self.data.node
    }

    /// Cached threshold for a query, if any update was received.
    pub fn cached_tau(&self, query: u32) -> Option<f64> {
        self.tau_cache.get(&query).copied()
    }

    /// Units with state still held on this node.
    pub fn open_units(&self) -> usize {
        self.units.len()
    }

    fn emit(&mut self, step: &mut Step, dst: u32, payload: &Payload) {
        let seq = &mut self.seq[dst as usize];
        step.out
            .push(Message::new(self.data.node, dst, *seq, payload));
        *seq += 1;
    }

    pub fn step(&mut self, msg: &Message) -> Result<Step> {
        if msg.dst != self.data.node {
            return Err(Error::Protocol(format!(
                "node {} received a message for {}",
                self.data.node, msg.dst
            )));
        }
        let mut step = Step::default();
        match msg.decode()? {
            Payload::QueryChunk {
                query,
                shard,
                order_index,
                order,
                tau_sq,
                probes,
                values,
            } => {
                let order: Vec<usize> = order.into_iter().map(usize::from).collect();
                let block = order.get(order_index as usize).copied();
                if shard as usize != self.data.shard || block != Some(self.data.block) {
                    return Err(Error::BlockNotResident {
                        node: self.data.node,
                        shard: shard as usize,
                        block: block.unwrap_or(usize::MAX),
                    });
                }
                if values.len() != self.data.width() {
                    return Err(Error::DimMismatch {
                        expected: self.data.width(),
                        actual: values.len(),
                    });
                }
                if let Some(&c) = probes.iter().find(|&&c| self.data.list(c).is_none()) {
                    return Err(Error::Protocol(format!(
                        "list {c} is not resident on node {}",
                        self.data.node
                    )));
                }
                let last = order_index as usize + 1 == order.len();
                let unit = self.units.entry((query, shard)).or_default();
                unit.chunk = Some(Chunk {
                    order,
                    order_index: order_index as usize,
                    tau_sq,
                    probes,
                    values,
                });
                if last {
                    unit.heap = Some(PruneState::new(self.params.k));
                }
                let buffered = std::mem::take(&mut unit.buffered);
                if order_index == 0 {
                    self.run_wave(&mut step, query, shard, 0, f64::INFINITY, Vec::new(), None)?;
                }
                for p in buffered {
                    self.dispatch(&mut step, p)?;
                }
            }
            p @ (Payload::PartialHandoff { .. } | Payload::Control(Control::NextWave { .. })) => {
                self.dispatch(&mut step, p)?;
            }
            Payload::ThresholdUpdate { query, tau_sq } => {
                let t = self.tau_cache.entry(query).or_insert(f64::INFINITY);
                if tau_sq < *t {
                    *t = tau_sq;
                }
            }
            Payload::TopKPartial { .. } => {
                return Err(Error::Protocol("workers do not accept TopKPartial".into()));
            }
            Payload::Control(Control::Shutdown) => step.shutdown = true,
        }
        Ok(step)
    }

    /// Handles a handoff or wave start, buffering it until the chunk arrives.
    fn dispatch(&mut self, step: &mut Step, p: Payload) -> Result<()> {
        let key = match &p {
            Payload::PartialHandoff { query, shard, .. } => (*query, *shard),
            Payload::Control(Control::NextWave { query, shard, .. }) => (*query, *shard),
            _ => unreachable!("only handoffs and wave starts are dispatched"),
        };
        let unit = self.units.entry(key).or_default();
        if unit.chunk.is_none() {
            unit.buffered.push(p);
            return Ok(());
        }
        match p {
            Payload::PartialHandoff {
                wave,
                stage,
                tau_sq,
                work,
                candidates,
                ..
            } => {
                let expected = unit.chunk.as_ref().map(|c| c.order_index);
                if expected != Some(stage as usize) {
                    return Err(Error::Protocol(format!(
                        "handoff for stage {stage} reached node {} at stage {expected:?}",
                        self.data.node
                    )));
                }
                self.run_wave(step, key.0, key.1, wave, tau_sq, work, Some(candidates))
            }
            Payload::Control(Control::NextWave { wave, tau_sq, .. }) => {
                self.run_wave(step, key.0, key.1, wave, tau_sq, Vec::new(), None)
            }
            _ => unreachable!(),
        }
    }

    /// Runs this node's stage of `wave`, looping locally while the node is
    /// both the first and the last stage.
    #[allow(clippy::too_many_arguments)]
    fn run_wave(
        &mut self,
        step: &mut Step,
        query: u32,
        shard: u16,
        mut wave: u16,
        mut tau_in: f64,
        mut work: Vec<StageWork>,
        mut incoming: Option<Vec<(u64, f64)>>,
    ) -> Result<()> {
        let prune = self.params.pruning && self.params.metric.supports_pruning();
        loop {
            let cached = self.tau_cache.get(&query).copied().unwrap_or(f64::INFINITY);
            let unit = self.units.get_mut(&(query, shard)).expect("unit exists");
            let chunk = unit.chunk.as_ref().expect("chunk present");
            let stages = chunk.order.len();
            let stage = chunk.order_index;
            let last = stage + 1 == stages;
            let waves = chunk.probes.len();
            if wave as usize >= waves {
                return Err(Error::Protocol(format!(
                    "wave {wave} beyond {waves} probed lists"
                )));
            }

            let mut tau = tau_in.min(chunk.tau_sq).min(cached);
            if let Some(h) = &unit.heap {
                tau = tau.min(h.tau_sq());
            }
            if !prune {
                tau = f64::INFINITY;
            }

            let mut cands = match incoming.take() {
                Some(c) => c,
                None => {
                    let list = self
                        .data
                        .list(chunk.probes[wave as usize])
                        .expect("probes checked on arrival");
                    list.ids.iter().map(|&id| (id, 0.0)).collect()
                }
            };
            let computed = cands.len();
            let metric = self.params.metric;
            let data = self.data;
            let mut missing = None;
            cands.retain_mut(|(id, s)| {
                let Some(row) = data.row(*id) else {
                    missing = Some(*id);
                    return false;
                };
                *s += block_score(metric, &chunk.values, row);
                last || !prune || *s <= tau
            });
            if let Some(id) = missing {
                return Err(Error::Protocol(format!(
                    "candidate {id} is not resident on node {}",
                    data.node
                )));
            }
            let floats = (computed * data.width()) as u64;
            step.floats += floats;
            work.push(StageWork {
                node: data.node as u16,
                floats: floats as u32,
                computed: computed as u32,
                kept: cands.len() as u32,
            });

            if !last {
                let next = self.plan.node_of(shard as usize, chunk.order[stage + 1]);
                let done = wave as usize + 1 == waves;
                let payload = Payload::PartialHandoff {
                    query,
                    shard,
                    wave,
                    stage: (stage + 1) as u8,
                    tau_sq: tau,
                    work,
                    candidates: cands,
                };
                if done {
                    self.units.remove(&(query, shard));
                }
                self.emit(step, next, &payload);
                return Ok(());
            }

            let heap = unit.heap.as_mut().expect("last stage keeps a heap");
            let mut entries = Vec::new();
            for (id, s) in cands {
                let key = metric.rank_key(s);
                if heap.offer(id, key) {
                    entries.push((id, key));
                }
            }
            let tau_out = tau.min(heap.tau_sq());
            if prune {
                entries.retain(|&(_, d)| d <= tau_out);
            }
            let first = self.plan.node_of(shard as usize, chunk.order[0]);
            let done = wave as usize + 1 == waves;
            let reducer = self.params.reducer;
            self.emit(
                step,
                reducer,
                &Payload::TopKPartial {
                    query,
                    shard,
                    wave,
                    last: done,
                    work,
                    entries,
                },
            );
            if done {
                self.units.remove(&(query, shard));
                return Ok(());
            }
            if first != self.data.node {
                self.emit(
                    step,
                    first,
                    &Payload::Control(Control::NextWave {
                        query,
                        shard,
                        wave: wave + 1,
                        tau_sq: tau_out,
                    }),
                );
                return Ok(());
            }
            wave += 1;
            tau_in = tau_out;
            work = Vec::new();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::ClusterIndex;

    fn setup() -> (VectorBatch, ClusterIndex, PartitionPlan) {
        let base = VectorBatch::from_rows(&[
            [0.0f32, 0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0, 1.0],
            [5.0, 5.0, 5.0, 5.0],
            [6.0, 6.0, 6.0, 6.0],
        ])
        .unwrap();
        let centroids = VectorBatch::from_rows(&[[0.5f32; 4], [5.5; 4]]).unwrap();
        let index =
            crate::index::assign_to_lists(&base, &ClusterIndex::from_centroids(centroids)).unwrap();
        let plan = PartitionPlan::build(2, 2, 4, &index.list_sizes()).unwrap();
        (base, index, plan)
    }

    #[test]
    fn resident_floats_cover_base_once() {
        let (base, index, plan) = setup();
        let nodes = build_nodes(&base, &index, &plan).unwrap();
        let total: usize = nodes.iter().map(NodeData::resident_floats).sum();
        assert_eq!(total, base.count() * base.dim());
    }

    fn params() -> WorkerParams {
        WorkerParams {
            k: 1,
            metric: Metric::L2,
            pruning: true,
            reducer: 4,
        }
    }

    #[test]
    fn looser_threshold_update_is_noop() {
        let (base, index, plan) = setup();
        let nodes = build_nodes(&base, &index, &plan).unwrap();
        let mut w = WorkerState::new(&nodes[0], &plan, params());
        for (tau, expect) in [(4.0, 4.0), (9.0, 4.0), (1.0, 1.0)] {
            let m = Message::new(
                4,
                0,
                0,
                &Payload::ThresholdUpdate {
                    query: 0,
                    tau_sq: tau,
                },
            );
            let s = w.step(&m).unwrap();
            assert!(s.out.is_empty());
            assert_eq!(w.cached_tau(0), Some(expect));
        }
    }

    #[test]
    fn misrouted_chunk_rejected() {
        let (base, index, plan) = setup();
        let nodes = build_nodes(&base, &index, &plan).unwrap();
        let mut w = WorkerState::new(&nodes[0], &plan, params());
        let (shard, _) = plan.cell_of(0);
        let chunk = Payload::QueryChunk {
            query: 0,
            shard: shard as u16,
            order_index: 0,
            order: vec![1, 0],
            tau_sq: f64::INFINITY,
            probes: vec![],
            values: vec![0.0; 2],
        };
        let err = w.step(&Message::new(4, 0, 0, &chunk)).unwrap_err();
        assert!(matches!(err, Error::BlockNotResident { .. }));
    }

    #[test]
    fn terminal_stage_reports_to_reducer() {
        let (base, index, plan) = setup();
        let nodes = build_nodes(&base, &index, &plan).unwrap();
        let shard = plan.shard_of(0);
        let last_node = plan.node_of(shard, 1);
        let mut w = WorkerState::new(&nodes[last_node as usize], &plan, params());
        let chunk = Payload::QueryChunk {
            query: 3,
            shard: shard as u16,
            order_index: 1,
            order: vec![0, 1],
            tau_sq: f64::INFINITY,
            probes: vec![0],
            values: vec![0.0; 2],
        };
        assert!(w
            .step(&Message::new(4, last_node, 0, &chunk))
            .unwrap()
            .out
            .is_empty());
        let handoff = Payload::PartialHandoff {
            query: 3,
            shard: shard as u16,
            wave: 0,
            stage: 1,
            tau_sq: f64::INFINITY,
            work: vec![],
            candidates: vec![(0, 0.0), (1, 2.0)],
        };
        let first_node = plan.node_of(shard, 0);
        let s = w
            .step(&Message::new(first_node, last_node, 0, &handoff))
            .unwrap();
        assert_eq!(s.out.len(), 1);
        assert_eq!(s.out[0].dst, 4);
        match s.out[0].decode().unwrap() {
            Payload::TopKPartial { last, entries, .. } => {
                assert!(last);
                assert_eq!(entries, vec![(0, 0.0)]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(w.open_units(), 0);
    }
}
