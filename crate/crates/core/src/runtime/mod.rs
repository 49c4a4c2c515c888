//! Node runtime: message formats, worker and reducer state machines, and two
//! transports that drive them (a discrete-event simulator and TCP sockets).
//!
//! Workers have ids `0..N` matching the plan's node numbering; the reducer
//! is node `N`.

pub mod message;
pub mod node;
pub mod reducer;
pub mod sim;
pub mod socket;

use crate::error::{check_dim, Result};
use crate::index::ClusterIndex;
use crate::pipeline::Engine;
use crate::planner::PartitionPlan;
use crate::vector::VectorBatch;

pub use message::{Message, MessageKind, Payload};
pub use node::{build_nodes, NodeData, WorkerState};
pub use reducer::ReducerState;
pub use sim::{sim_run, SimConfig, SimOutcome, Trace, TraceEvent, TrafficLedger};
pub use socket::{socket_run, SocketOutcome};

/// A plan materialized onto nodes: each worker's resident block data.
#[derive(Debug, Clone)]
pub struct Topology<'a> {
    pub base: &'a VectorBatch,
    pub index: &'a ClusterIndex,
    pub plan: &'a PartitionPlan,
    pub nodes: Vec<NodeData>,
}

impl<'a> Topology<'a> {
    pub fn new(
        base: &'a VectorBatch,
        index: &'a ClusterIndex,
        plan: &'a PartitionPlan,
    ) -> Result<Self> {
        check_dim(index.dim(), base.dim())?;
        plan.validate_for(index.nlist(), index.dim())?;
        let nodes = build_nodes(base, index, plan)?;
        Ok(Self {
            base,
            index,
            plan,
            nodes,
        })
    }

    pub fn engine(&self) -> Engine<'a> {
        Engine {
            base: self.base,
            index: self.index,
            plan: self.plan,
        }
    }

    /// Floats stored across all workers.
    pub fn resident_floats(&self) -> usize {
        self.nodes.iter().map(NodeData::resident_floats).sum()
    }
}
