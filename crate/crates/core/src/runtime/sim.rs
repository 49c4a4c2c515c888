//! Deterministic discrete-event simulation of the cluster.
//!
//! Time is kept in integer nanoseconds. Every ordered node pair is a FIFO
//! channel: a message starts serializing once the channel is free, takes
//! `bytes / bandwidth` to transmit and arrives `latency` later. A node
//! handles one message at a time and is busy for a fixed per-message
//! overhead plus a per-float compute cost. Pending deliveries are ordered by
//! `(time, src, dst, seq)`, so a run is a pure function of its inputs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{bad_param, Error, Result};
use crate::pipeline::{prewarm_heap, EngineConfig, PruneState, PruneStats};
use crate::router::VisitOrder;
use crate::topk::TopKResult;
use crate::vector::VectorBatch;

use super::message::{Message, MessageKind};
use super::node::{Step, WorkerParams, WorkerState};
use super::reducer::ReducerState;
use super::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Worker count; the reducer is one extra node with id `nodes`.
    pub nodes: usize,
    pub latency_us: f64,
    /// May be `f64::INFINITY` for zero serialization delay.
    pub bandwidth_bytes_per_us: f64,
    pub seed: u64,
    /// Chance that a message is silently lost. Off by default.
    pub drop_probability: f64,
    pub message_overhead_ns: u64,
    pub ns_per_float: f64,
    /// Push every threshold improvement to the nodes still working on the query.
    pub eager_threshold: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            latency_us: 5.0,
            bandwidth_bytes_per_us: 12_500.0,
            seed: 0,
            drop_probability: 0.0,
            message_overhead_ns: 1_000,
            ns_per_float: 1.0,
            eager_threshold: false,
        }
    }
}

impl SimConfig {
    pub fn with_nodes(nodes: usize) -> Self {
        Self {
            nodes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(bad_param("the simulator needs at least one worker"));
        }
        if !(self.latency_us.is_finite() && self.latency_us >= 0.0) {
            return Err(bad_param(format!(
                "latency must be >= 0, got {}",
                self.latency_us
            )));
        }
        if self.bandwidth_bytes_per_us.is_nan() || self.bandwidth_bytes_per_us <= 0.0 {
            return Err(bad_param(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth_bytes_per_us
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(bad_param("drop probability must be in [0, 1]"));
        }
        if !(self.ns_per_float.is_finite() && self.ns_per_float >= 0.0) {
            return Err(bad_param("per-float cost must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn latency_ns(&self) -> u64 {
        (self.latency_us * 1_000.0).round() as u64
    }

    /// Serialization delay for `bytes` on one link.
    pub fn transfer_ns(&self, bytes: usize) -> u64 {
        if self.bandwidth_bytes_per_us.is_infinite() {
            return 0;
        }
        (bytes as f64 * 1_000.0 / self.bandwidth_bytes_per_us).ceil() as u64
    }

    pub fn compute_ns(&self, floats: u64) -> u64 {
        self.message_overhead_ns + (floats as f64 * self.ns_per_float).ceil() as u64
    }
}

/// Bytes and message count on one (src, dst, kind) channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelTotals {
    pub bytes: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub src: u32,
    pub dst: u32,
    pub kind: MessageKind,
    pub bytes: u64,
    pub count: u64,
}

/// Cumulative payload bytes and counts per (src, dst, kind).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrafficLedger {
    channels: BTreeMap<(u32, u32, MessageKind), ChannelTotals>,
}

impl Serialize for TrafficLedger {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.channels.len()))?;
        for row in self.rows() {
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

impl TrafficLedger {
    pub fn record(&mut self, src: u32, dst: u32, kind: MessageKind, bytes: usize) {
        let t = self.channels.entry((src, dst, kind)).or_default();
        t.bytes += bytes as u64;
        t.count += 1;
    }

    pub fn merge(&mut self, other: &TrafficLedger) {
        for (&k, t) in &other.channels {
            let e = self.channels.entry(k).or_default();
            e.bytes += t.bytes;
            e.count += t.count;
        }
    }

    pub fn get(&self, src: u32, dst: u32, kind: MessageKind) -> ChannelTotals {
        self.channels
            .get(&(src, dst, kind))
            .copied()
            .unwrap_or_default()
    }

    pub fn rows(&self) -> impl Iterator<Item = LedgerRow> + '_ {
        self.channels
            .iter()
            .map(|(&(src, dst, kind), t)| LedgerRow {
                src,
                dst,
                kind,
                bytes: t.bytes,
                count: t.count,
            })
    }

    pub fn bytes_of(&self, kind: MessageKind) -> u64 {
        self.rows()
            .filter(|r| r.kind == kind)
            .map(|r| r.bytes)
            .sum()
    }

    pub fn count_of(&self, kind: MessageKind) -> u64 {
        self.rows()
            .filter(|r| r.kind == kind)
            .map(|r| r.count)
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.channels.values().map(|t| t.bytes).sum()
    }

    pub fn total_count(&self) -> u64 {
        self.channels.values().map(|t| t.count).sum()
    }

    /// Bytes sent between two workers, excluding reducer traffic.
    pub fn inter_node_bytes(&self, workers: u32) -> u64 {
        self.rows()
            .filter(|r| r.src < workers && r.dst < workers)
            .map(|r| r.bytes)
            .sum()
    }
}

/// One sent message, as exported to the JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub send_ns: u64,
    pub deliver_ns: u64,
    pub src: u32,
    pub dst: u32,
    pub seq: u64,
    pub kind: MessageKind,
    pub bytes: usize,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { events })
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_jsonl())
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub results: Vec<TopKResult>,
    pub ledger: TrafficLedger,
    pub trace: Trace,
    pub stats: PruneStats,
    /// Floats computed per worker.
    pub node_floats: Vec<u64>,
    /// Busy time per node, reducer last.
    pub node_busy_ns: Vec<u64>,
    /// Time at which the last query completed.
    pub makespan_ns: u64,
    pub orders: Vec<VisitOrder>,
}

impl SimOutcome {
    /// Queries per simulated second.
    pub fn simulated_qps(&self) -> f64 {
        if self.makespan_ns == 0 {
            return f64::INFINITY;
        }
        self.results.len() as f64 / (self.makespan_ns as f64 * 1e-9)
    }
}

/// Prewarmed heaps and probes for a batch, shared by both transports.
pub(crate) fn prepare(
    topology: &Topology<'_>,
    queries: &VectorBatch,
    config: &EngineConfig,
) -> Result<(Vec<Vec<u32>>, Vec<PruneState>)> {
    config.validate(topology.index, topology.plan)?;
    crate::error::check_dim(topology.index.dim(), queries.dim())?;
    let probes = topology.engine().probe_all(queries, config.nprobe)?;
    let states = if config.pruning && config.metric.supports_pruning() {
        prewarm_heap(
            queries,
            topology.base,
            topology.index,
            &probes,
            config.prewarm_size(),
            config.k,
            config.metric,
            config.seed,
        )?
    } else {
        (0..queries.count())
            .map(|_| PruneState::new(config.k))
            .collect()
    };
    Ok((probes, states))
}

pub(crate) fn worker_params(topology: &Topology<'_>, config: &EngineConfig) -> WorkerParams {
    WorkerParams {
        k: config.k,
        metric: config.metric,
        pruning: config.pruning,
        reducer: topology.plan.node_count() as u32,
    }
}

struct Network<'c> {
    cfg: &'c SimConfig,
    rng: ChaCha8Rng,
    channel_free: HashMap<(u32, u32), u64>,
    pending: BTreeMap<(u64, u32, u32, u64), Message>,
    ledger: TrafficLedger,
    trace: Trace,
    participants: u32,
}

impl Network<'_> {
    fn send(&mut self, msg: Message, at: u64) -> Result<()> {
        if msg.dst >= self.participants {
            return Err(Error::UnknownNode(msg.dst));
        }
        let bytes = msg.payload.len();
        let free = self.channel_free.entry((msg.src, msg.dst)).or_insert(0);
        let start = at.max(*free);
        *free = start + self.cfg.transfer_ns(bytes);
        let deliver = *free + self.cfg.latency_ns();
        let dropped =
            self.cfg.drop_probability > 0.0 && self.rng.random_bool(self.cfg.drop_probability);
        self.ledger.record(msg.src, msg.dst, msg.kind, bytes);
        self.trace.events.push(TraceEvent {
            send_ns: at,
            deliver_ns: deliver,
            src: msg.src,
            dst: msg.dst,
            seq: msg.seq,
            kind: msg.kind,
            bytes,
            dropped,
        });
        if !dropped {
            self.pending
                .insert((deliver, msg.src, msg.dst, msg.seq), msg);
        }
        Ok(())
    }
}

/// Runs `queries` through the simulated cluster.
pub fn sim_run(
    cfg: &SimConfig,
    topology: &Topology<'_>,
    queries: &VectorBatch,
    config: &EngineConfig,
) -> Result<SimOutcome> {
    cfg.validate()?;
    let plan = topology.plan;
    if cfg.nodes != plan.node_count() {
        return Err(bad_param(format!(
            "simulator has {} workers but the plan needs {}",
            cfg.nodes,
            plan.node_count()
        )));
    }
    let (probes, states) = prepare(topology, queries, config)?;
    let mut reducer =
        ReducerState::new(plan, queries, config, &probes, states, cfg.eager_threshold)?;
    let params = worker_params(topology, config);
    let mut workers: Vec<WorkerState<'_>> = topology
        .nodes
        .iter()
        .map(|d| WorkerState::new(d, plan, params))
        .collect();

    let n = cfg.nodes;
    let rid = reducer.id();
    let mut net = Network {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        channel_free: HashMap::new(),
        pending: BTreeMap::new(),
        ledger: TrafficLedger::default(),
        trace: Trace::default(),
        participants: n as u32 + 1,
    };
    let mut node_free = vec![0u64; n + 1];
    let mut node_busy = vec![0u64; n + 1];
    let mut makespan = 0;

    for m in reducer.start()? {
        net.send(m, 0)?;
    }
    while let Some(((t, _, dst, _), msg)) = net.pending.pop_first() {
        let d = dst as usize;
        let start = t.max(node_free[d]);
        let (out, cost) = if dst == rid {
            let was_finished = reducer.is_finished();
            let out = reducer.step(&msg)?;
            let cost = cfg.compute_ns(0);
            if !was_finished && reducer.is_finished() {
                makespan = start + cost;
            }
            (out, cost)
        } else {
            let Step { out, floats, .. } = workers[d].step(&msg)?;
            (out, cfg.compute_ns(floats))
        };
        let end = start + cost;
        node_free[d] = end;
        node_busy[d] += cost;
        for m in out {
            net.send(m, end)?;
        }
    }
    if !reducer.is_finished() {
        return Err(Error::Deadlock {
            incomplete: reducer.incomplete(),
        });
    }
    let outcome = reducer.into_outcome();
    Ok(SimOutcome {
        results: outcome.results,
        ledger: net.ledger,
        trace: net.trace,
        stats: outcome.stats,
        node_floats: outcome.node_floats,
        node_busy_ns: node_busy,
        makespan_ns: makespan,
        orders: outcome.orders,
    })
}
