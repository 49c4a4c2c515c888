//! Blocked partial-distance computation and the monotone pruning predicate.
//!
//! A vector's dimensions are split into contiguous blocks. For squared L2 the
//! per-block contributions are nonnegative, so the running sum over the blocks
//! visited so far is a lower bound on the full distance. Once that running sum
//! exceeds the current k-th best distance the candidate can be dropped without
//! touching the remaining blocks.
//!
//! All sums are accumulated in `f64`. The difference of two `f32` values and
//! its square are exact in `f64`, so blocked and unblocked evaluations only
//! differ in the rounding of the final additions.

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, check_dim, Error, Result};

/// Largest number of dimension blocks a plan may use; visit masks are `u64`.
pub const MAX_DIM_BLOCKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Squared Euclidean distance. The only metric that supports pruning.
    #[default]
    L2,
    /// Inner product; ranked by descending dot product.
    InnerProduct,
}

impl Metric {
    /// Maps a raw accumulated score to the ascending ranking key.
    pub fn rank_key(self, raw: f64) -> f64 {
        match self {
            Metric::L2 => raw,
            Metric::InnerProduct => -raw,
        }
    }

    pub fn supports_pruning(self) -> bool {
        matches!(self, Metric::L2)
    }

    pub fn tag(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::InnerProduct => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Metric::L2),
            1 => Some(Metric::InnerProduct),
            _ => None,
        }
    }
}

/// Contiguous, disjoint dimension blocks covering `[0, d)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DimBlockSpec {
    boundaries: Vec<usize>,
}

impl DimBlockSpec {
    /// `boundaries` holds `M + 1` strictly increasing offsets from `0` to `d`.
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(bad_param("a block spec needs at least two boundaries"));
        }
        if boundaries[0] != 0 {
            return Err(bad_param("first block boundary must be 0"));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad_param("block boundaries must be strictly increasing"));
        }
        if boundaries.len() - 1 > MAX_DIM_BLOCKS {
            return Err(bad_param(format!(
                "at most {MAX_DIM_BLOCKS} dimension blocks are supported"
            )));
        }
        Ok(Self { boundaries })
    }

    /// `blocks` equal-width blocks; the remainder goes to the last block.
    pub fn equal_width(dim: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || blocks > dim {
            return Err(bad_param(format!(
                "cannot split {dim} dimensions into {blocks} blocks"
            )));
        }
        let width = dim / blocks;
        let mut boundaries: Vec<usize> = (0..blocks).map(|b| b * width).collect();
        boundaries.push(dim);
        Self::new(boundaries)
    }

    pub fn block_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.boundaries.last().expect("validated non-empty")
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.boundaries[block]..self.boundaries[block + 1]
    }

    pub fn width(&self, block: usize) -> usize {
        self.boundaries[block + 1] - self.boundaries[block]
    }

    fn check_block(&self, block: usize) -> Result<()> {
        if block < self.block_count() {
            Ok(())
        } else {
            Err(Error::BadBlock {
                block,
                block_count: self.block_count(),
            })
        }
    }
}

impl TryFrom<Vec<usize>> for DimBlockSpec {
    type Error = Error;

    fn try_from(boundaries: Vec<usize>) -> Result<Self> {
        Self::new(boundaries)
    }
}

impl From<DimBlockSpec> for Vec<usize> {
    fn from(spec: DimBlockSpec) -> Self {
        spec.boundaries
    }
}

/// Squared L2 over two equal-length slices.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Raw per-block score for `metric`: squared L2 or signed dot product.
#[inline]
pub fn block_score(metric: Metric, a: &[f32], b: &[f32]) -> f64 {
    match metric {
        Metric::L2 => l2_sq(a, b),
        Metric::InnerProduct => dot(a, b),
    }
}

fn check_pair(q: &[f32], v: &[f32], spec: &DimBlockSpec, block: usize) -> Result<()> {
    check_dim(spec.dim(), q.len())?;
    check_dim(spec.dim(), v.len())?;
    spec.check_block(block)
}

/// Squared L2 contribution of one dimension block.
pub fn partial_l2(q: &[f32], v: &[f32], spec: &DimBlockSpec, block: usize) -> Result<f64> {
    check_pair(q, v, spec, block)?;
    let r = spec.range(block);
    Ok(l2_sq(&q[r.clone()], &v[r]))
}

/// Dot-product contribution of one dimension block. Signed, so never pruned on.
pub fn partial_dot(q: &[f32], v: &[f32], spec: &DimBlockSpec, block: usize) -> Result<f64> {
    check_pair(q, v, spec, block)?;
    let r = spec.range(block);
    Ok(dot(&q[r.clone()], &v[r]))
}

/// Running squared-L2 sum for one (query, candidate) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAccumulator {
    pub query_id: u64,
    pub candidate_id: u64,
    s_sq: f64,
    visited: u64,
    pruned: bool,
}

impl PartialAccumulator {
    pub fn new(query_id: u64, candidate_id: u64) -> Self {
        Self {
            query_id,
            candidate_id,
            s_sq: 0.0,
            visited: 0,
            pruned: false,
        }
    }

    pub fn s_sq(&self) -> f64 {
        self.s_sq
    }

    pub fn is_pruned(&self) -> bool {
        self.pruned
    }

    pub fn visited(&self, block: usize) -> bool {
        block < MAX_DIM_BLOCKS && self.visited & (1 << block) != 0
    }

    pub fn visited_count(&self) -> u32 {
        self.visited.count_ones()
    }

    /// Adds the squared-L2 contribution of `block`.
    pub fn accumulate(&mut self, block: usize, d_k_sq: f64) -> Result<()> {
        if self.pruned {
            return Err(Error::AlreadyPruned {
                candidate: self.candidate_id,
            });
        }
        // Rejects NaN as well.
        if d_k_sq.is_nan() || d_k_sq < 0.0 {
            return Err(Error::NegativePartial { value: d_k_sq });
        }
        if block >= MAX_DIM_BLOCKS {
            return Err(Error::BadBlock {
                block,
                block_count: MAX_DIM_BLOCKS,
            });
        }
        if self.visited(block) {
            return Err(Error::BlockRevisited {
                candidate: self.candidate_id,
                block,
            });
        }
        self.s_sq += d_k_sq;
        self.visited |= 1 << block;
        Ok(())
    }

    pub fn mark_pruned(&mut self) {
        self.pruned = true;
    }
}

/// True iff the running sum already exceeds the k-th best distance.
///
/// Strict: a candidate whose partial equals `tau_sq` may still tie into the
/// top-K and is left for the (distance, id) order to decide.
#[inline]
pub fn should_prune(acc: &PartialAccumulator, tau_sq: f64) -> bool {
    acc.s_sq > tau_sq
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_width_puts_remainder_last() {
        let spec = DimBlockSpec::equal_width(10, 3).unwrap();
        assert_eq!(spec.boundaries(), &[0, 3, 6, 10]);
        assert_eq!(spec.width(2), 4);
        assert!(DimBlockSpec::equal_width(2, 3).is_err());
        assert!(DimBlockSpec::equal_width(4, 0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(DimBlockSpec::new(vec![1, 4]).is_err());
        assert!(DimBlockSpec::new(vec![0, 2, 2, 4]).is_err());
        assert!(DimBlockSpec::new(vec![0]).is_err());
        assert!(DimBlockSpec::new((0..=65).collect()).is_err());
    }

    #[test]
    fn identical_vectors_have_zero_partials() {
        let spec = DimBlockSpec::equal_width(6, 3).unwrap();
        let q = [0.5, -1.0, 2.0, 3.0, 4.0, -7.25];
        for b in 0..3 {
            assert_eq!(partial_l2(&q, &q, &spec, b).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_block_decomposition() {
        let spec = DimBlockSpec::equal_width(4, 2).unwrap();
        let q = [1.0; 4];
        let v = [0.0; 4];
        let a = partial_l2(&q, &v, &spec, 0).unwrap();
        let b = partial_l2(&q, &v, &spec, 1).unwrap();
        assert_eq!((a, b), (2.0, 2.0));
        assert_eq!(a + b, l2_sq(&q, &v));
    }

    #[test]
    fn orthogonal_blocks_dot_to_zero() {
        let spec = DimBlockSpec::equal_width(4, 2).unwrap();
        let q = [1.0, 0.0, 0.0, 1.0];
        let v = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(partial_dot(&q, &v, &spec, 0).unwrap(), 0.0);
        assert_eq!(partial_dot(&q, &v, &spec, 1).unwrap(), 0.0);
    }

    #[test]
    fn normalized_self_dot_is_one() {
        let raw = [3.0f32, -1.0, 2.0, 0.5, 4.0];
        let norm = raw.iter().map(|x| x * x).sum::<f32>().sqrt();
        let q: Vec<f32> = raw.iter().map(|x| x / norm).collect();
        let spec = DimBlockSpec::new(vec![0, 1, 3, 5]).unwrap();
        let total: f64 = (0..3).map(|b| partial_dot(&q, &q, &spec, b).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn kernel_errors() {
        let spec = DimBlockSpec::equal_width(4, 2).unwrap();
        assert!(matches!(
            partial_l2(&[0.0; 3], &[0.0; 4], &spec, 0),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            partial_dot(&[0.0; 4], &[0.0; 4], &spec, 2),
            Err(Error::BadBlock { .. })
        ));
    }

    #[test]
    fn accumulate_and_prune() {
        let mut acc = PartialAccumulator::new(0, 9);
        acc.accumulate(0, 2.5).unwrap();
        assert_eq!(acc.s_sq(), 2.5);
        assert!(acc.visited(0) && !acc.visited(1));

        let mut acc = PartialAccumulator::new(0, 9);
        for (b, d) in [0.75, 1.5, 0.125].into_iter().enumerate() {
            acc.accumulate(b, d).unwrap();
        }
        assert_eq!(acc.s_sq(), 0.75 + 1.5 + 0.125);
        assert_eq!(acc.visited_count(), 3);

        assert!(matches!(
            acc.accumulate(1, 1.0),
            Err(Error::BlockRevisited { .. })
        ));
        assert!(matches!(
            acc.accumulate(3, -0.5),
            Err(Error::NegativePartial { .. })
        ));
        assert!(matches!(
            acc.accumulate(3, f64::NAN),
            Err(Error::NegativePartial { .. })
        ));
        acc.mark_pruned();
        assert!(matches!(
            acc.accumulate(3, 1.0),
            Err(Error::AlreadyPruned { .. })
        ));
    }

    #[test]
    fn prune_is_strict() {
        let mut acc = PartialAccumulator::new(0, 1);
        acc.accumulate(0, 5.0).unwrap();
        assert!(should_prune(&acc, 4.0));
        let mut acc = PartialAccumulator::new(0, 1);
        acc.accumulate(0, 4.0).unwrap();
        assert!(!should_prune(&acc, 4.0));
        assert!(!should_prune(&acc, f64::INFINITY));
    }
}
