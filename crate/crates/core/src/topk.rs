//! Bounded top-K selection under the (distance, id) total order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::kernel::Metric;

/// One result entry. `distance` is the ranking key: squared L2, or the
/// negated dot product under [`Metric::InnerProduct`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

impl Neighbor {
    pub fn new(id: u64, distance: f64) -> Self {
        Self { id, distance }
    }

    /// Ascending distance, then ascending id.
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, Copy)]
struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp_rank(&other.0)
    }
}

/// Final answer for one query: at most `k` entries sorted by (distance, id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKResult {
    pub k: usize,
    pub metric: Metric,
    pub entries: Vec<Neighbor>,
}

impl TopKResult {
    /// Sorts, deduplicates by id (keeping the smallest distance) and truncates.
    pub fn from_candidates(k: usize, metric: Metric, mut entries: Vec<Neighbor>) -> Self {
        entries.sort_by(Neighbor::cmp_rank);
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        entries.retain(|n| seen.insert(n.id));
        entries.truncate(k);
        Self { k, metric, entries }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|n| n.id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks the length bound and the strict (distance, id) order.
    pub fn is_well_formed(&self) -> bool {
        self.entries.len() <= self.k
            && self
                .entries
                .windows(2)
                .all(|w| w[0].cmp_rank(&w[1]) == Ordering::Less)
    }
}

/// Max-heap of the K best candidates seen so far; its top is the pruning threshold.
#[derive(Debug, Clone)]
pub struct TopKHeap {
    k: usize,
    heap: BinaryHeap<Ranked>,
    members: HashMap<u64, f64>,
}

impl TopKHeap {
    pub fn new(k: usize) -> Self {
        assert!(k > 0, "k must be positive");
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
            members: HashMap::with_capacity(k + 1),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// The k-th best distance, or `+inf` while fewer than K entries are held.
    pub fn threshold(&self) -> f64 {
        if self.is_full() {
            self.heap.peek().map_or(f64::INFINITY, |r| r.0.distance)
        } else {
            f64::INFINITY
        }
    }

    /// Offers a candidate; returns whether the heap changed. A repeated id
    /// keeps its smaller distance.
    pub fn push(&mut self, id: u64, distance: f64) -> bool {
        let cand = Neighbor::new(id, distance);
        if let Some(&old) = self.members.get(&id) {
            if distance.total_cmp(&old) != Ordering::Less {
                return false;
            }
            let kept: Vec<Ranked> = self.heap.drain().filter(|r| r.0.id != id).collect();
            self.heap = kept.into();
            self.members.remove(&id);
        }
        if self.is_full() {
            let worst = self.heap.peek().expect("full heap").0;
            if cand.cmp_rank(&worst) != Ordering::Less {
                return false;
            }
            self.heap.pop();
            self.members.remove(&worst.id);
        }
        self.heap.push(Ranked(cand));
        self.members.insert(id, distance);
        true
    }

    pub fn contains(&self, id: u64) -> bool {
        self.members.contains_key(&id)
    }

    pub fn to_sorted(&self) -> Vec<Neighbor> {
        let mut v: Vec<Neighbor> = self.heap.iter().map(|r| r.0).collect();
        v.sort_by(Neighbor::cmp_rank);
        v
    }

    pub fn into_result(self, metric: Metric) -> TopKResult {
        let entries = self.to_sorted();
        TopKResult {
            k: self.k,
            metric,
            entries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_is_infinite_until_full() {
        let mut h = TopKHeap::new(2);
        assert_eq!(h.threshold(), f64::INFINITY);
        h.push(1, 3.0);
        assert_eq!(h.threshold(), f64::INFINITY);
        h.push(2, 1.0);
        assert_eq!(h.threshold(), 3.0);
        assert!(h.push(3, 2.0));
        assert_eq!(h.threshold(), 2.0);
        assert!(!h.push(4, 5.0));
    }

    #[test]
    fn ties_resolved_by_id() {
        let mut h = TopKHeap::new(1);
        h.push(7, 1.0);
        assert!(h.push(3, 1.0));
        assert!(!h.push(9, 1.0));
        assert_eq!(h.to_sorted()[0].id, 3);
    }

    #[test]
    fn duplicate_ids_keep_minimum() {
        let mut h = TopKHeap::new(3);
        h.push(1, 4.0);
        assert!(!h.push(1, 5.0));
        assert!(h.push(1, 2.0));
        assert_eq!(h.len(), 1);
        assert_eq!(h.to_sorted(), vec![Neighbor::new(1, 2.0)]);
    }

    proptest! {
        #[test]
        fn heap_matches_sort(items in prop::collection::vec((0u64..50, 0u32..20), 0..80), k in 1usize..12) {
            let mut h = TopKHeap::new(k);
            let mut all = Vec::new();
            for (id, d) in items {
                h.push(id, d as f64);
                all.push(Neighbor::new(id, d as f64));
            }
            let expect = TopKResult::from_candidates(k, Metric::L2, all);
            let got = h.into_result(Metric::L2);
            prop_assert!(got.is_well_formed());
            prop_assert_eq!(got, expect);
        }
    }
}
