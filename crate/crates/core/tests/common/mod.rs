#![allow(dead_code)]

use gridann::index::{assign_to_lists, train_centroids};
use gridann::{ClusterIndex, Metric, VectorBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform vectors in `[-1, 1)`, ids `0..n`.
pub fn uniform(n: usize, dim: usize, seed: u64) -> VectorBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    VectorBatch::with_sequential_ids(dim, data).unwrap()
}

pub fn build_index(base: &VectorBatch, nlist: usize, seed: u64) -> ClusterIndex {
    let trained = train_centroids(base, nlist, 10, seed).unwrap();
    assign_to_lists(base, &trained).unwrap()
}

/// Brute force written independently of the library: f64 sums, sort by
/// (score, id), keep the first `k`.
pub fn naive_topk(
    base: &VectorBatch,
    index: &ClusterIndex,
    lists: &[u32],
    q: &[f32],
    k: usize,
    metric: Metric,
) -> Vec<u64> {
    let mut scored: Vec<(f64, u64)> = Vec::new();
    for &l in lists {
        for &id in index.list(l as usize) {
            let v = base.get(id).unwrap();
            let s = match metric {
                Metric::L2 => q
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>(),
                Metric::InnerProduct => -q
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>(),
            };
            scored.push((s, id));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for b in 0..n {
            if !prefix.contains(&b) {
                prefix.push(b);
                go(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), n, &mut out);
    out
}
