//! Query load distribution: probed clusters, then owning vector shards, then
//! per-dimension-block chunks, plus the per-query block visit order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, check_dim, Result};
use crate::index::{probe_centroids, ClusterIndex};
use crate::planner::PartitionPlan;

/// A block is moved to the end of the visit order once its load exceeds the
/// mean block load by this factor.
pub const HOT_BLOCK_TRIGGER: f64 = 1.25;

/// Half-life, in completed queries, of the per-node load average.
pub const LOAD_HALF_LIFE_QUERIES: f64 = 64.0;

/// The slice of one query sent to the node holding `(shard_id, dim_block_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryChunk {
    pub query_id: u64,
    pub shard_id: usize,
    pub dim_block_id: usize,
    pub block_values: Vec<f32>,
    pub probe_lists: Vec<u32>,
    pub order_index: usize,
}

/// Order in which a query visits the dimension blocks; a permutation of `0..n_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisitOrder {
    pub query_id: u64,
    order: Vec<usize>,
}

impl VisitOrder {
    pub fn new(query_id: u64, order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &b in &order {
            if b >= order.len() || std::mem::replace(&mut seen[b], true) {
                return Err(bad_param(format!("{order:?} is not a permutation")));
            }
        }
        if order.is_empty() {
            return Err(bad_param("visit order is empty"));
        }
        Ok(Self { query_id, order })
    }

    pub fn identity(query_id: u64, n_dim: usize) -> Self {
        Self::rotation(query_id, n_dim, 0)
    }

    /// `[r, r+1, ..., r-1] mod n_dim`.
    pub fn rotation(query_id: u64, n_dim: usize, r: usize) -> Self {
        Self {
            query_id,
            order: (0..n_dim).map(|i| (r + i) % n_dim).collect(),
        }
    }

    pub fn blocks(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn position(&self, block: usize) -> Option<usize> {
        self.order.iter().position(|&b| b == block)
    }

    pub fn last(&self) -> usize {
        *self.order.last().expect("non-empty")
    }
}

/// Probed cluster ids grouped by owning shard, probe order kept within a shard.
pub fn map_to_shards(
    q: &[f32],
    index: &ClusterIndex,
    plan: &PartitionPlan,
    nprobe: usize,
) -> Result<BTreeMap<usize, Vec<u32>>> {
    let probes = probe_centroids(q, index, nprobe)?;
    Ok(group_by_shard(&probes, plan))
}

pub fn group_by_shard(probes: &[u32], plan: &PartitionPlan) -> BTreeMap<usize, Vec<u32>> {
    let mut map: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for &c in probes {
        map.entry(plan.shard_of(c as usize)).or_default().push(c);
    }
    map
}

/// One chunk per (probed shard, dimension block), shards ascending and blocks
/// in visit order.
pub fn split_query(
    query_id: u64,
    q: &[f32],
    plan: &PartitionPlan,
    shard_map: &BTreeMap<usize, Vec<u32>>,
    order: &VisitOrder,
) -> Result<Vec<QueryChunk>> {
    check_dim(plan.dim(), q.len())?;
    if order.len() != plan.n_dim() {
        return Err(bad_param(format!(
            "visit order covers {} blocks, plan has {}",
            order.len(),
            plan.n_dim()
        )));
    }
    let spec = plan.dim_spec();
    let mut chunks = Vec::with_capacity(shard_map.len() * plan.n_dim());
    for (&shard, lists) in shard_map {
        for (order_index, &block) in order.blocks().iter().enumerate() {
            chunks.push(QueryChunk {
                query_id,
                shard_id: shard,
                dim_block_id: block,
                block_values: q[spec.range(block)].to_vec(),
                probe_lists: lists.clone(),
                order_index,
            });
        }
    }
    Ok(chunks)
}

/// Load per dimension block: the sum over shards of the nodes holding it.
pub fn block_loads(node_loads: &[f64], plan: &PartitionPlan) -> Vec<f64> {
    let mut loads = vec![0.0; plan.n_dim()];
    for (n, &l) in node_loads.iter().enumerate().take(plan.node_count()) {
        loads[plan.cell_of(n as u32).1] += l;
    }
    loads
}

/// Round-robin rotation by arrival index; if one block is hotter than
/// [`HOT_BLOCK_TRIGGER`] times the mean, that block is moved to the end.
pub fn order_for(
    query_id: u64,
    node_loads: &[f64],
    plan: &PartitionPlan,
    arrival: u64,
) -> VisitOrder {
    let n = plan.n_dim();
    let mut order = VisitOrder::rotation(query_id, n, (arrival % n as u64) as usize);
    if n > 1 {
        let loads = block_loads(node_loads, plan);
        let mean = loads.iter().sum::<f64>() / n as f64;
        let hottest = (0..n)
            .max_by(|&a, &b| loads[a].total_cmp(&loads[b]).then(b.cmp(&a)))
            .expect("n >= 1");
        if mean > 0.0 && loads[hottest] > HOT_BLOCK_TRIGGER * mean {
            order.order.retain(|&b| b != hottest);
            order.order.push(hottest);
        }
    }
    order
}

/// Visit orders for queries given as `(query_id, arrival_index)`.
pub fn schedule_order(
    load_stats: &[f64],
    plan: &PartitionPlan,
    arrivals: &[(u64, u64)],
) -> BTreeMap<u64, VisitOrder> {
    arrivals
        .iter()
        .map(|&(q, a)| (q, order_for(q, load_stats, plan, a)))
        .collect()
}

/// Exponentially weighted per-node work, updated once per completed query.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadTracker {
    loads: Vec<f64>,
    weight: f64,
}

impl LoadTracker {
    pub fn new(nodes: usize) -> Self {
        Self {
            loads: vec![0.0; nodes],
            weight: 1.0 - 0.5f64.powf(1.0 / LOAD_HALF_LIFE_QUERIES),
        }
    }

    pub fn observe(&mut self, work: &[f64]) {
        for (l, &w) in self.loads.iter_mut().zip(work) {
            *l += self.weight * (w - *l);
        }
    }

    pub fn loads(&self) -> &[f64] {
        &self.loads
    }
}

/// How visit orders are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OrderPolicy {
    /// The same block order for every query.
    Fixed(Vec<usize>),
    /// Rotation by arrival index only.
    RoundRobin,
    /// Rotation, with the hottest block deferred to last when overloaded.
    #[default]
    LoadAware,
}

impl OrderPolicy {
    pub fn validate(&self, n_dim: usize) -> Result<()> {
        if let OrderPolicy::Fixed(order) = self {
            if order.len() != n_dim {
                return Err(bad_param(format!(
                    "fixed order {order:?} does not cover {n_dim} blocks"
                )));
            }
            VisitOrder::new(0, order.clone())?;
        }
        Ok(())
    }

    pub fn order(
        &self,
        query_id: u64,
        loads: &[f64],
        plan: &PartitionPlan,
        arrival: u64,
    ) -> VisitOrder {
        match self {
            OrderPolicy::Fixed(order) => VisitOrder {
                query_id,
                order: order.clone(),
            },
            OrderPolicy::RoundRobin => VisitOrder::rotation(
                query_id,
                plan.n_dim(),
                (arrival % plan.n_dim() as u64) as usize,
            ),
            OrderPolicy::LoadAware => order_for(query_id, loads, plan, arrival),
        }
    }
}
