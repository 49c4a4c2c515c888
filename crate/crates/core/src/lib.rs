//! Distributed inverted-file nearest-neighbor search over a grid of nodes.
//!
//! The base set is clustered into inverted lists. A [`PartitionPlan`] splits
//! the lists into vector shards and the dimensions into contiguous blocks;
//! node `(shard, block)` holds the block's coordinates of the shard's
//! vectors. Queries visit the blocks of each probed shard in turn, and
//! candidates whose running partial distance already exceeds the current
//! k-th best are dropped before the remaining blocks are computed.

pub mod bench;
pub mod error;
pub mod index;
pub mod io;
pub mod kernel;
pub mod pipeline;
pub mod planner;
pub mod router;
pub mod runtime;
pub mod topk;
pub mod vector;

pub use error::{Error, Result};
pub use index::{assign_to_lists, exact_topk, probe_centroids, train_centroids, ClusterIndex};
pub use kernel::{DimBlockSpec, Metric, PartialAccumulator};
pub use pipeline::{merge_topk, Engine, EngineConfig, PruneState, PruneStats};
pub use planner::{CostCoefficients, PartitionPlan, PlanMode, WorkloadProfile};
pub use router::{OrderPolicy, VisitOrder};
pub use topk::{Neighbor, TopKHeap, TopKResult};
pub use vector::{DenseVector, VectorBatch};
