//! Cluster-based (IVF) index: k-means centroids plus inverted lists of ids,
//! and the exhaustive top-K scan every other component is checked against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{bad_param, check_dim, Error, Result};
use crate::kernel::{l2_sq, Metric};
use crate::topk::{Neighbor, TopKResult};
use crate::vector::VectorBatch;

pub const DEFAULT_KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndex {
    centroids: VectorBatch,
    lists: Vec<Vec<u64>>,
    trained: bool,
}

impl ClusterIndex {
    /// Index over explicit centroids with empty lists.
    pub fn from_centroids(centroids: VectorBatch) -> Self {
        let nlist = centroids.count();
        Self {
            centroids,
            lists: vec![Vec::new(); nlist],
            trained: true,
        }
    }

    pub(crate) fn from_parts(centroids: VectorBatch, lists: Vec<Vec<u64>>) -> Result<Self> {
        if lists.len() != centroids.count() {
            return Err(Error::Format(format!(
                "{} lists for {} centroids",
                lists.len(),
                centroids.count()
            )));
        }
        Ok(Self {
            centroids,
            lists,
            trained: true,
        })
    }

    pub fn nlist(&self) -> usize {
        self.centroids.count()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn centroids(&self) -> &VectorBatch {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        self.centroids.row(c)
    }

    pub fn lists(&self) -> &[Vec<u64>] {
        &self.lists
    }

    pub fn list(&self, c: usize) -> &[u64] {
        &self.lists[c]
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    pub fn total_assigned(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Nearest centroid by squared L2, ties to the lower centroid id.
    pub fn nearest_centroid(&self, v: &[f32]) -> usize {
        nearest(&self.centroids, v).0
    }
}

fn nearest(centroids: &VectorBatch, v: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.count() {
        let d = l2_sq(v, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_rows(centroids: &VectorBatch, base: &VectorBatch) -> Vec<(usize, f64)> {
    (0..base.count())
        .into_par_iter()
        .map(|r| nearest(centroids, base.row(r)))
        .collect()
}

fn kmeans_pp_seed(base: &VectorBatch, nlist: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = base.count();
    let mut chosen = Vec::with_capacity(nlist);
    let mut is_chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    is_chosen[first] = true;
    let mut d2: Vec<f64> = (0..n)
        .map(|r| l2_sq(base.row(r), base.row(first)))
        .collect();
    while chosen.len() < nlist {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (r, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(r);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every remaining point duplicates a chosen centre.
            (0..n).find(|&r| !is_chosen[r]).expect("nlist <= count")
        };
        chosen.push(pick);
        is_chosen[pick] = true;
        let c = base.row(pick);
        d2.par_iter_mut().enumerate().for_each(|(r, w)| {
            let d = l2_sq(base.row(r), c);
            if d < *w {
                *w = d;
            }
        });
    }
    chosen
}

fn recompute_centroids(base: &VectorBatch, assign: &[(usize, f64)], centroids: &mut [f32]) {
    let dim = base.dim();
    let nlist = centroids.len() / dim;
    let mut sums = vec![0f64; nlist * dim];
    let mut counts = vec![0usize; nlist];
    for (r, &(c, _)) in assign.iter().enumerate() {
        counts[c] += 1;
        for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(base.row(r)) {
            *s += x as f64;
        }
    }
    for c in 0..nlist {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, &s) in centroids[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&sums[c * dim..(c + 1) * dim])
        {
            *dst = (s * inv) as f32;
        }
    }
}

/// Moves the farthest point of the largest cluster into each empty cluster.
/// Returns whether anything changed.
fn reseed_empty(base: &VectorBatch, assign: &mut [(usize, f64)], centroids: &mut [f32]) -> bool {
    let dim = base.dim();
    let nlist = centroids.len() / dim;
    let mut changed = false;
    loop {
        let mut counts = vec![0usize; nlist];
        for &(c, _) in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return changed;
        };
        let largest = (0..nlist)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("nlist >= 1");
        if counts[largest] < 2 {
            return changed;
        }
        let far = (0..assign.len())
            .filter(|&r| assign[r].0 == largest)
            .max_by(|&a, &b| assign[a].1.total_cmp(&assign[b].1).then(b.cmp(&a)))
            .expect("largest cluster is non-empty");
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(base.row(far));
        assign[far] = (empty, 0.0);
        changed = true;
    }
}

/// Lloyd's k-means with k-means++ seeding. Deterministic in `(base, nlist, iters, seed)`.
///
/// The returned index has its lists filled with the final nearest-centroid
/// assignment; no list is empty.
pub fn train_centroids(
    base: &VectorBatch,
    nlist: usize,
    iters: usize,
    seed: u64,
) -> Result<ClusterIndex> {
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if nlist == 0 || nlist > base.count() {
        return Err(bad_param(format!(
            "nlist must be in 1..={}, got {nlist}",
            base.count()
        )));
    }
    if iters == 0 {
        return Err(bad_param("k-means needs at least one iteration"));
    }
    let dim = base.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = kmeans_pp_seed(base, nlist, &mut rng);
    let mut centroids: Vec<f32> = seeds
        .iter()
        .flat_map(|&r| base.row(r).iter().copied())
        .collect();

    for _ in 0..iters {
        let as_batch = VectorBatch::with_sequential_ids(dim, centroids.clone())?;
        let mut assign = assign_rows(&as_batch, base);
        reseed_empty(base, &mut assign, &mut centroids);
        recompute_centroids(base, &assign, &mut centroids);
    }

    // Final assignment against the final centroids; reseed until no list is empty.
    let mut assign;
    let mut rounds = 0;
    loop {
        let batch = VectorBatch::with_sequential_ids(dim, centroids.clone())?;
        assign = assign_rows(&batch, base);
        rounds += 1;
        if !reseed_empty(base, &mut assign, &mut centroids) || rounds > nlist {
            break;
        }
    }
    let centroids = VectorBatch::with_sequential_ids(dim, centroids)?;
    let mut lists = vec![Vec::new(); nlist];
    for (r, &(c, _)) in assign.iter().enumerate() {
        lists[c].push(base.id(r));
    }
    Ok(ClusterIndex {
        centroids,
        lists,
        trained: true,
    })
}

/// Rebuilds the inverted lists: every base id goes to its nearest centroid.
pub fn assign_to_lists(base: &VectorBatch, index: &ClusterIndex) -> Result<ClusterIndex> {
    if !index.trained {
        return Err(bad_param("index is not trained"));
    }
    check_dim(index.dim(), base.dim())?;
    let assign = assign_rows(&index.centroids, base);
    let mut lists = vec![Vec::new(); index.nlist()];
    for (r, (c, _)) in assign.into_iter().enumerate() {
        lists[c].push(base.id(r));
    }
    Ok(ClusterIndex {
        centroids: index.centroids.clone(),
        lists,
        trained: true,
    })
}

/// The `nprobe` nearest centroid ids, ascending by (distance, id).
pub fn probe_centroids(q: &[f32], index: &ClusterIndex, nprobe: usize) -> Result<Vec<u32>> {
    check_dim(index.dim(), q.len())?;
    if nprobe == 0 || nprobe > index.nlist() {
        return Err(bad_param(format!(
            "nprobe must be in 1..={}, got {nprobe}",
            index.nlist()
        )));
    }
    let mut scored: Vec<Neighbor> = (0..index.nlist())
        .map(|c| Neighbor::new(c as u64, l2_sq(q, index.centroid(c))))
        .collect();
    if nprobe < scored.len() {
        scored.select_nth_unstable_by(nprobe - 1, Neighbor::cmp_rank);
        scored.truncate(nprobe);
    }
    scored.sort_by(Neighbor::cmp_rank);
    Ok(scored.into_iter().map(|n| n.id as u32).collect())
}

/// Exact k nearest neighbours by squared L2 over every vector in `base`.
pub fn exact_topk(base: &VectorBatch, q: &[f32], k: usize) -> Result<TopKResult> {
    if k == 0 {
        return Err(bad_param("k must be at least 1"));
    }
    check_dim(base.dim(), q.len())?;
    let all: Vec<Neighbor> = base
        .iter()
        .map(|(id, v)| Neighbor::new(id, l2_sq(q, v)))
        .collect();
    Ok(TopKResult::from_candidates(k, Metric::L2, all))
}

/// Exact top-K restricted to the union of the given inverted lists.
pub fn exact_topk_in_lists(
    base: &VectorBatch,
    index: &ClusterIndex,
    lists: &[u32],
    q: &[f32],
    k: usize,
    metric: Metric,
) -> Result<TopKResult> {
    if k == 0 {
        return Err(bad_param("k must be at least 1"));
    }
    check_dim(base.dim(), q.len())?;
    let mut all = Vec::new();
    for &c in lists {
        for &id in index.list(c as usize) {
            let v = base
                .get(id)
                .ok_or_else(|| bad_param(format!("id {id} not in base")))?;
            let raw = crate::kernel::block_score(metric, q, v);
            all.push(Neighbor::new(id, metric.rank_key(raw)));
        }
    }
    Ok(TopKResult::from_candidates(k, metric, all))
}
