//! Partition plans and the cost model that chooses between them.
//!
//! A plan lays the index out as a grid of `n_vec` vector shards (groups of
//! whole inverted lists) by `n_dim` contiguous dimension blocks, one grid cell
//! per node. The cost of a plan for a workload is the sum of per-query costs
//! plus `alpha` times the population standard deviation of per-node
//! computation load.
//!
//! # Units of work
//!
//! For a query whose probed lists hold `C_s` vectors in shard `s`
//! (`C = sum C_s`), with dimension `d` and block widths `w_b`:
//!
//! | term | work |
//! |------|------|
//! | dimension block `b`, computation | `C * w_b` floats |
//! | dimension block `b`, communication | `C * (n_dim - 1) / n_dim` partial results |
//! | vector shard `s`, computation | `C_s * d` floats |
//! | vector shard `s`, communication | `d` query floats if the shard owns a probed list, else 0 |
//!
//! Each coefficient is a cost in milliseconds per unit of its term's work.
//! Node `n` holding cell `(s, b)` carries load
//! `(comp_dim + comp_vec) * C_s * w_b` for every query.

use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, Error, Result};
use crate::kernel::{l2_sq, DimBlockSpec};

/// One grid cell per node: `node_of_block[shard][block]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PlanDocument", into = "PlanDocument")]
pub struct PartitionPlan {
    n_vec: usize,
    n_dim: usize,
    dim_spec: DimBlockSpec,
    shard_of_list: Vec<usize>,
    node_of_block: Vec<Vec<u32>>,
    cell_of_node: Vec<(usize, usize)>,
}

/// JSON form of a plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanDocument {
    pub n_vec: usize,
    pub n_dim: usize,
    pub boundaries: Vec<usize>,
    pub shard_of_list: Vec<usize>,
    pub node_of_block: Vec<Vec<u32>>,
}

impl TryFrom<PlanDocument> for PartitionPlan {
    type Error = Error;

    fn try_from(doc: PlanDocument) -> Result<Self> {
        PartitionPlan::new(
            doc.n_vec,
            doc.n_dim,
            DimBlockSpec::new(doc.boundaries)?,
            doc.shard_of_list,
            doc.node_of_block,
        )
    }
}

impl From<PartitionPlan> for PlanDocument {
    fn from(p: PartitionPlan) -> Self {
        PlanDocument {
            n_vec: p.n_vec,
            n_dim: p.n_dim,
            boundaries: p.dim_spec.boundaries().to_vec(),
            shard_of_list: p.shard_of_list,
            node_of_block: p.node_of_block,
        }
    }
}

impl PartitionPlan {
    pub fn new(
        n_vec: usize,
        n_dim: usize,
        dim_spec: DimBlockSpec,
        shard_of_list: Vec<usize>,
        node_of_block: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if n_vec == 0 || n_dim == 0 {
            return Err(bad_param("a plan needs at least one shard and one block"));
        }
        if dim_spec.block_count() != n_dim {
            return Err(bad_param(format!(
                "block spec has {} blocks, plan expects {n_dim}",
                dim_spec.block_count()
            )));
        }
        if let Some(&s) = shard_of_list.iter().find(|&&s| s >= n_vec) {
            return Err(bad_param(format!("list mapped to shard {s} >= {n_vec}")));
        }
        if node_of_block.len() != n_vec || node_of_block.iter().any(|r| r.len() != n_dim) {
            return Err(bad_param("node map must be n_vec x n_dim"));
        }
        let nodes = n_vec * n_dim;
        let mut cell_of_node = vec![None; nodes];
        for (s, row) in node_of_block.iter().enumerate() {
            for (b, &n) in row.iter().enumerate() {
                let slot = cell_of_node
                    .get_mut(n as usize)
                    .ok_or_else(|| bad_param(format!("node {n} out of range for {nodes} nodes")))?;
                if slot.replace((s, b)).is_some() {
                    return Err(bad_param(format!("node {n} holds two blocks")));
                }
            }
        }
        Ok(Self {
            n_vec,
            n_dim,
            dim_spec,
            shard_of_list,
            node_of_block,
            cell_of_node: cell_of_node.into_iter().map(Option::unwrap).collect(),
        })
    }

    /// Equal-width dimension blocks, lists packed onto shards largest-first
    /// (each to the currently lightest shard), node `shard * n_dim + block`.
    pub fn build(n_vec: usize, n_dim: usize, dim: usize, list_sizes: &[usize]) -> Result<Self> {
        let dim_spec = DimBlockSpec::equal_width(dim, n_dim)?;
        if n_vec == 0 {
            return Err(bad_param("a plan needs at least one shard"));
        }
        let mut order: Vec<usize> = (0..list_sizes.len()).collect();
        order.sort_by(|&a, &b| list_sizes[b].cmp(&list_sizes[a]).then(a.cmp(&b)));
        let mut fill = vec![0usize; n_vec];
        let mut shard_of_list = vec![0; list_sizes.len()];
        for c in order {
            let s = (0..n_vec)
                .min_by_key(|&s| (fill[s], s))
                .expect("n_vec >= 1");
            shard_of_list[c] = s;
            fill[s] += list_sizes[c];
        }
        let node_of_block = (0..n_vec)
            .map(|s| (0..n_dim).map(|b| (s * n_dim + b) as u32).collect())
            .collect();
        Self::new(n_vec, n_dim, dim_spec, shard_of_list, node_of_block)
    }

    pub fn n_vec(&self) -> usize {
        self.n_vec
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    pub fn node_count(&self) -> usize {
        self.n_vec * self.n_dim
    }

    pub fn dim(&self) -> usize {
        self.dim_spec.dim()
    }

    pub fn dim_spec(&self) -> &DimBlockSpec {
        &self.dim_spec
    }

    pub fn nlist(&self) -> usize {
        self.shard_of_list.len()
    }

    pub fn shard_of(&self, list: usize) -> usize {
        self.shard_of_list[list]
    }

    pub fn shard_of_list(&self) -> &[usize] {
        &self.shard_of_list
    }

    pub fn node_of(&self, shard: usize, block: usize) -> u32 {
        self.node_of_block[shard][block]
    }

    /// `(shard, block)` held by `node`.
    pub fn cell_of(&self, node: u32) -> (usize, usize) {
        self.cell_of_node[node as usize]
    }

    pub fn lists_in_shard(&self, shard: usize) -> Vec<u32> {
        (0..self.shard_of_list.len())
            .filter(|&c| self.shard_of_list[c] == shard)
            .map(|c| c as u32)
            .collect()
    }

    /// Floats a node stores: its shard's vectors restricted to its block.
    pub fn resident_floats(&self, node: u32, list_sizes: &[usize]) -> usize {
        let (shard, block) = self.cell_of(node);
        let vectors: usize = list_sizes
            .iter()
            .enumerate()
            .filter(|&(c, _)| self.shard_of_list[c] == shard)
            .map(|(_, &n)| n)
            .sum();
        vectors * self.dim_spec.width(block)
    }

    /// Checks that the plan fits an index of `nlist` lists over `dim` dimensions.
    pub fn validate_for(&self, nlist: usize, dim: usize) -> Result<()> {
        if self.shard_of_list.len() != nlist {
            return Err(bad_param(format!(
                "plan maps {} lists, index has {nlist}",
                self.shard_of_list.len()
            )));
        }
        if self.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: self.dim(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Milliseconds per unit of work for each cost term (units in the module docs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    /// Per float computed inside a dimension block.
    pub comp_dim: f64,
    /// Per partial result handed between dimension blocks.
    pub comm_dim: f64,
    /// Per float computed inside a vector shard.
    pub comp_vec: f64,
    /// Per query float shipped to a vector shard.
    pub comm_vec: f64,
}

impl CostCoefficients {
    pub fn new(comp_dim: f64, comm_dim: f64, comp_vec: f64, comm_vec: f64) -> Result<Self> {
        let c = Self {
            comp_dim,
            comm_dim,
            comp_vec,
            comm_vec,
        };
        if [comp_dim, comm_dim, comp_vec, comm_vec]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(bad_param(format!(
                "cost coefficients must be finite and >= 0: {c:?}"
            )));
        }
        Ok(c)
    }

    /// Coefficients implied by a link and compute model. A computed float is
    /// charged once, split evenly between the two layers; a partial result is
    /// `partial_bytes` on the wire and a query float is four bytes.
    pub fn from_link(
        compute_ns_per_float: f64,
        bandwidth_bytes_per_us: f64,
        partial_bytes: f64,
    ) -> Result<Self> {
        let ns_per_byte = 1000.0 / bandwidth_bytes_per_us;
        let ms = 1e-6;
        Self::new(
            compute_ns_per_float * 0.5 * ms,
            partial_bytes * ns_per_byte * ms,
            compute_ns_per_float * 0.5 * ms,
            4.0 * ns_per_byte * ms,
        )
    }

    /// Wall-clock micro-probe: times one batch of block distances and one
    /// message round trip between two threads.
    pub fn calibrate() -> Self {
        const ROWS: usize = 2048;
        const WIDTH: usize = 64;
        let data: Vec<f32> = (0..ROWS * WIDTH).map(|i| (i % 97) as f32 * 0.01).collect();
        let q: Vec<f32> = (0..WIDTH).map(|i| i as f32 * 0.02).collect();
        let start = Instant::now();
        let mut sink = 0.0;
        for row in data.chunks_exact(WIDTH) {
            sink += l2_sq(&q, row);
        }
        std::hint::black_box(sink);
        let ns_per_float = start.elapsed().as_nanos().max(1) as f64 / (ROWS * WIDTH) as f64;

        let payload = vec![0u8; 64 * 1024];
        let (to_echo, echo_in) = std::sync::mpsc::channel::<Vec<u8>>();
        let (echo_out, back) = std::sync::mpsc::channel::<Vec<u8>>();
        let echo = std::thread::spawn(move || {
            if let Ok(m) = echo_in.recv() {
                let _ = echo_out.send(m);
            }
        });
        let start = Instant::now();
        let _ = to_echo.send(payload.clone());
        let _ = back.recv();
        let round_trip_ns = start.elapsed().as_nanos().max(1) as f64;
        let _ = echo.join();
        let bytes_per_us = (2.0 * payload.len() as f64) / (round_trip_ns / 1000.0);
        Self::from_link(ns_per_float, bytes_per_us, 16.0)
            .expect("measured coefficients are finite and positive")
    }
}

/// Query hit statistics the planner optimizes for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub dim: usize,
    pub nprobe: usize,
    pub list_sizes: Vec<usize>,
    /// Probe count per cluster; sums to `queries * nprobe`.
    pub hits: Vec<u64>,
    /// Probed cluster ids of each sampled query.
    pub probes: Vec<Vec<u32>>,
}

impl WorkloadProfile {
    pub fn from_probes(dim: usize, list_sizes: Vec<usize>, probes: Vec<Vec<u32>>) -> Result<Self> {
        let nprobe = probes.first().map_or(0, Vec::len);
        let mut hits = vec![0u64; list_sizes.len()];
        for p in &probes {
            if p.len() != nprobe {
                return Err(bad_param(
                    "every sampled query must probe the same number of lists",
                ));
            }
            for &c in p {
                *hits
                    .get_mut(c as usize)
                    .ok_or_else(|| bad_param(format!("probed list {c} does not exist")))? += 1;
            }
        }
        Ok(Self {
            dim,
            nprobe,
            list_sizes,
            hits,
            probes,
        })
    }

    pub fn q_count(&self) -> usize {
        self.probes.len()
    }

    /// Concatenates the sampled queries of two profiles over the same index.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.list_sizes != other.list_sizes {
            return Err(bad_param("profiles describe different indexes"));
        }
        let mut probes = self.probes.clone();
        probes.extend(other.probes.iter().cloned());
        Self::from_probes(self.dim, self.list_sizes.clone(), probes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermWork {
    pub comp: f64,
    pub comm: f64,
}

/// Work one query induces on every dimension block and vector shard of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryWork {
    pub dim_terms: Vec<TermWork>,
    pub vec_terms: Vec<TermWork>,
}

impl QueryWork {
    pub fn new(plan: &PartitionPlan, list_sizes: &[usize], probes: &[u32]) -> Self {
        let mut per_shard = vec![0usize; plan.n_vec()];
        let mut touched = vec![false; plan.n_vec()];
        for &c in probes {
            let s = plan.shard_of(c as usize);
            per_shard[s] += list_sizes[c as usize];
            touched[s] = true;
        }
        let total: usize = per_shard.iter().sum();
        let handoff_share = (plan.n_dim() - 1) as f64 / plan.n_dim() as f64;
        let spec = plan.dim_spec();
        let dim_terms = (0..plan.n_dim())
            .map(|b| TermWork {
                comp: (total * spec.width(b)) as f64,
                comm: total as f64 * handoff_share,
            })
            .collect();
        let vec_terms = (0..plan.n_vec())
            .map(|s| TermWork {
                comp: (per_shard[s] * plan.dim()) as f64,
                comm: if touched[s] { plan.dim() as f64 } else { 0.0 },
            })
            .collect();
        Self {
            dim_terms,
            vec_terms,
        }
    }

    /// One unit of every kind of work on every block and shard.
    pub fn unit(plan: &PartitionPlan) -> Self {
        let one = TermWork {
            comp: 1.0,
            comm: 1.0,
        };
        Self {
            dim_terms: vec![one; plan.n_dim()],
            vec_terms: vec![one; plan.n_vec()],
        }
    }
}

/// Per-query cost: dimension-based plus vector-based components.
pub fn query_cost(plan: &PartitionPlan, work: &QueryWork, coeffs: &CostCoefficients) -> f64 {
    assert_eq!(work.dim_terms.len(), plan.n_dim(), "work/plan block count");
    assert_eq!(work.vec_terms.len(), plan.n_vec(), "work/plan shard count");
    let dim: f64 = work
        .dim_terms
        .iter()
        .map(|t| coeffs.comp_dim * t.comp + coeffs.comm_dim * t.comm)
        .sum();
    let vec: f64 = work
        .vec_terms
        .iter()
        .map(|t| coeffs.comp_vec * t.comp + coeffs.comm_vec * t.comm)
        .sum();
    dim + vec
}

/// Computation load per node (index = node id) over the whole workload.
pub fn node_load(
    plan: &PartitionPlan,
    workload: &WorkloadProfile,
    coeffs: &CostCoefficients,
) -> Vec<f64> {
    let per_float = coeffs.comp_dim + coeffs.comp_vec;
    // Candidate vectors each shard sees, summed over the workload.
    let mut shard_vectors = vec![0u64; plan.n_vec()];
    for (c, &hits) in workload.hits.iter().enumerate() {
        shard_vectors[plan.shard_of(c)] += hits * workload.list_sizes[c] as u64;
    }
    (0..plan.node_count() as u32)
        .map(|n| {
            let (s, b) = plan.cell_of(n);
            per_float * (shard_vectors[s] * plan.dim_spec().width(b) as u64) as f64
        })
        .collect()
}

/// Population standard deviation of node loads.
pub fn imbalance(loads: &[f64]) -> f64 {
    if loads.is_empty() {
        return 0.0;
    }
    // Welford's update; the two-pass formula is used as the test oracle.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in loads.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    (m2.max(0.0) / loads.len() as f64).sqrt()
}

/// Sum of per-query costs plus `alpha` times the load imbalance.
pub fn total_cost(
    plan: &PartitionPlan,
    workload: &WorkloadProfile,
    coeffs: &CostCoefficients,
    alpha: f64,
) -> f64 {
    let queries: f64 = workload
        .probes
        .iter()
        .map(|p| query_cost(plan, &QueryWork::new(plan, &workload.list_sizes, p), coeffs))
        .sum();
    queries + alpha * imbalance(&node_load(plan, workload, coeffs))
}

/// Every `n_vec x n_dim == n_nodes` factorization with `n_dim <= dim`,
/// ordered by ascending `n_vec`.
pub fn enumerate_plans(
    n_nodes: usize,
    dim: usize,
    list_sizes: &[usize],
) -> Result<Vec<PartitionPlan>> {
    if n_nodes == 0 {
        return Err(bad_param("need at least one node"));
    }
    (1..=n_nodes)
        .filter(|&n_vec| n_nodes.is_multiple_of(n_vec))
        .map(|n_vec| (n_vec, n_nodes / n_vec))
        .filter(|&(_, n_dim)| n_dim <= dim)
        .map(|(n_vec, n_dim)| PartitionPlan::build(n_vec, n_dim, dim, list_sizes))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    pub n_vec: usize,
    pub n_dim: usize,
    pub query_cost: f64,
    pub imbalance: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PlanSelection {
    pub plan: PartitionPlan,
    pub scores: Vec<PlanScore>,
}

pub fn score_plan(
    plan: &PartitionPlan,
    workload: &WorkloadProfile,
    coeffs: &CostCoefficients,
    alpha: f64,
) -> PlanScore {
    let imb = imbalance(&node_load(plan, workload, coeffs));
    let total = total_cost(plan, workload, coeffs, alpha);
    PlanScore {
        n_vec: plan.n_vec(),
        n_dim: plan.n_dim(),
        query_cost: total - alpha * imb,
        imbalance: imb,
        total,
    }
}

/// Cheapest candidate by `total_cost`; ties go to more shards, then fewer blocks.
pub fn select_plan(
    candidates: &[PartitionPlan],
    workload: &WorkloadProfile,
    coeffs: &CostCoefficients,
    alpha: f64,
) -> Result<PlanSelection> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(bad_param(format!("alpha must be >= 0, got {alpha}")));
    }
    let scores: Vec<PlanScore> = candidates
        .iter()
        .map(|p| score_plan(p, workload, coeffs, alpha))
        .collect();
    let best = (0..candidates.len())
        .min_by(|&a, &b| {
            scores[a]
                .total
                .total_cmp(&scores[b].total)
                .then(scores[b].n_vec.cmp(&scores[a].n_vec))
                .then(scores[a].n_dim.cmp(&scores[b].n_dim))
        })
        .ok_or(Error::NoCandidates)?;
    Ok(PlanSelection {
        plan: candidates[best].clone(),
        scores,
    })
}

/// How the planner is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    /// Choose the factorization with the cost model.
    Hybrid,
    /// Whole-vector shards only (`n_dim == 1`).
    Vector,
    /// Dimension blocks only (`n_vec == 1`).
    Dimension,
}

impl PlanMode {
    pub fn name(self) -> &'static str {
        match self {
            PlanMode::Hybrid => "hybrid",
            PlanMode::Vector => "vector",
            PlanMode::Dimension => "dimension",
        }
    }
}

pub fn plan_for_mode(
    mode: PlanMode,
    n_nodes: usize,
    workload: &WorkloadProfile,
    coeffs: &CostCoefficients,
    alpha: f64,
) -> Result<PlanSelection> {
    let dim = workload.dim;
    let sizes = &workload.list_sizes;
    let candidates = match mode {
        PlanMode::Hybrid => enumerate_plans(n_nodes, dim, sizes)?,
        PlanMode::Vector => vec![PartitionPlan::build(n_nodes, 1, dim, sizes)?],
        PlanMode::Dimension => vec![PartitionPlan::build(1, n_nodes, dim, sizes)?],
    };
    select_plan(&candidates, workload, coeffs, alpha)
}

/// Shared current plan; replacing it is atomic and only affects queries that
/// read the handle afterwards.
#[derive(Debug, Clone)]
pub struct PlanHandle {
    inner: Arc<RwLock<Arc<PartitionPlan>>>,
}

impl PlanHandle {
    pub fn new(plan: PartitionPlan) -> Self {
        Self {
            inner: Arc::new(RwLock::new(Arc::new(plan))),
        }
    }

    pub fn current(&self) -> Arc<PartitionPlan> {
        self.inner.read().expect("plan lock poisoned").clone()
    }

    /// Installs `plan` and returns the previous one.
    pub fn replace(&self, plan: PartitionPlan) -> Arc<PartitionPlan> {
        std::mem::replace(
            &mut *self.inner.write().expect("plan lock poisoned"),
            Arc::new(plan),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(n: usize) -> Vec<usize> {
        (0..n).map(|c| 10 + (c * 7) % 13).collect()
    }

    #[test]
    fn divisor_enumeration() {
        let shapes = |n, d| -> Vec<(usize, usize)> {
            enumerate_plans(n, d, &sizes(16))
                .unwrap()
                .iter()
                .map(|p| (p.n_vec(), p.n_dim()))
                .collect()
        };
        assert_eq!(shapes(6, 128), vec![(1, 6), (2, 3), (3, 2), (6, 1)]);
        assert_eq!(shapes(4, 2), vec![(2, 2), (4, 1)]);
        assert_eq!(shapes(12, 128).len(), 6);
        assert_eq!(shapes(1, 1), vec![(1, 1)]);
        assert!(enumerate_plans(0, 4, &sizes(4)).is_err());
    }

    #[test]
    fn build_is_a_valid_grid() {
        let s = sizes(20);
        let p = PartitionPlan::build(3, 2, 10, &s).unwrap();
        assert_eq!(p.node_count(), 6);
        assert_eq!(p.dim_spec().boundaries(), &[0, 5, 10]);
        let mut seen = [false; 6];
        for sh in 0..3 {
            for b in 0..2 {
                let n = p.node_of(sh, b);
                assert!(!std::mem::replace(&mut seen[n as usize], true));
                assert_eq!(p.cell_of(n), (sh, b));
            }
        }
        let covered: usize = (0..3).map(|sh| p.lists_in_shard(sh).len()).sum();
        assert_eq!(covered, 20);
        let total: usize = (0..6).map(|n| p.resident_floats(n, &s)).sum();
        assert_eq!(total, s.iter().sum::<usize>() * 10);
    }

    #[test]
    fn lpt_packing_balances_sizes() {
        let p = PartitionPlan::build(2, 1, 4, &[5, 5, 4, 3, 3]).unwrap();
        let fill = |sh| -> usize {
            p.lists_in_shard(sh)
                .iter()
                .map(|&c| [5, 5, 4, 3, 3][c as usize])
                .sum()
        };
        // Greedy largest-first: 5,4 on shard 0 and 5,3,3 on shard 1.
        assert_eq!((fill(0), fill(1)), (9, 11));
        assert_eq!(p.lists_in_shard(0), vec![0, 2]);
    }

    #[test]
    fn invalid_plans_rejected() {
        let spec = DimBlockSpec::equal_width(4, 2).unwrap();
        assert!(PartitionPlan::new(1, 2, spec.clone(), vec![0], vec![vec![0, 0]]).is_err());
        assert!(PartitionPlan::new(1, 2, spec.clone(), vec![1], vec![vec![0, 1]]).is_err());
        assert!(PartitionPlan::new(1, 3, spec.clone(), vec![0], vec![vec![0, 1, 2]]).is_err());
        assert!(PartitionPlan::new(1, 2, spec, vec![0], vec![vec![0, 2]]).is_err());
    }

    #[test]
    fn plan_json_round_trip() {
        let p = PartitionPlan::build(2, 2, 8, &sizes(6)).unwrap();
        let json = p.to_json();
        assert!(json.contains("\"boundaries\""));
        assert_eq!(PartitionPlan::from_json(&json).unwrap(), p);
        let broken = json.replace("\"n_dim\": 2", "\"n_dim\": 3");
        assert!(PartitionPlan::from_json(&broken).is_err());
    }

    #[test]
    fn unit_work_example_costs_182() {
        let p = PartitionPlan::build(2, 3, 6, &sizes(4)).unwrap();
        let c = CostCoefficients::new(20.0, 30.0, 15.0, 1.0).unwrap();
        assert_eq!(query_cost(&p, &QueryWork::unit(&p), &c), 182.0);
    }

    #[test]
    fn zero_work_query_costs_nothing() {
        let p = PartitionPlan::build(2, 2, 8, &sizes(4)).unwrap();
        let c = CostCoefficients::new(20.0, 30.0, 15.0, 1.0).unwrap();
        assert_eq!(query_cost(&p, &QueryWork::new(&p, &sizes(4), &[]), &c), 0.0);
    }

    #[test]
    fn imbalance_values() {
        assert_eq!(imbalance(&[3.0, 3.0, 3.0]), 0.0);
        assert_eq!(imbalance(&[0.0, 10.0]), 5.0);
        assert_eq!(imbalance(&[]), 0.0);
        assert_eq!(imbalance(&[7.0]), 0.0);
    }

    #[test]
    fn coefficient_validation() {
        assert!(CostCoefficients::new(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(CostCoefficients::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        let c = CostCoefficients::from_link(0.25, 12_500.0, 16.0).unwrap();
        assert!(c.comp_dim > 0.0 && c.comm_vec > 0.0);
        let m = CostCoefficients::calibrate();
        assert!(m.comp_dim > 0.0 && m.comm_dim > 0.0);
    }

    #[test]
    fn select_plan_single_candidate_and_empty() {
        let s = sizes(4);
        let w = WorkloadProfile::from_probes(8, s.clone(), vec![vec![0, 1], vec![2, 3]]).unwrap();
        let c = CostCoefficients::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let p = PartitionPlan::build(2, 2, 8, &s).unwrap();
        let sel = select_plan(std::slice::from_ref(&p), &w, &c, 1.0).unwrap();
        assert_eq!(sel.plan, p);
        assert!(matches!(
            select_plan(&[], &w, &c, 1.0),
            Err(Error::NoCandidates)
        ));
        assert!(select_plan(&[p], &w, &c, -1.0).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(WorkloadProfile::from_probes(4, vec![1, 2], vec![vec![0], vec![0, 1]]).is_err());
        assert!(WorkloadProfile::from_probes(4, vec![1, 2], vec![vec![5]]).is_err());
        let w = WorkloadProfile::from_probes(4, vec![1, 2], vec![vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(w.hits, vec![2, 2]);
        assert_eq!(w.hits.iter().sum::<u64>(), (w.q_count() * w.nprobe) as u64);
    }

    #[test]
    fn plan_handle_swaps_atomically() {
        let s = sizes(4);
        let h = PlanHandle::new(PartitionPlan::build(1, 2, 4, &s).unwrap());
        let before = h.current();
        let old = h.replace(PartitionPlan::build(2, 1, 4, &s).unwrap());
        assert_eq!(old.n_dim(), 2);
        assert_eq!(before.n_dim(), 2);
        assert_eq!(h.current().n_vec(), 2);
    }
}
