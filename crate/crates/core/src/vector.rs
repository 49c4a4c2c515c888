//! Dense `f32` vectors and row-major batches with explicit ids.

use std::collections::HashMap;

use crate::error::{bad_param, check_dim, Error, Result};

/// A single finite `f32` vector with at least one component.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    values: Vec<f32>,
}

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(bad_param("vector must have at least one component"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(bad_param(format!("component {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }
}

impl AsRef<[f32]> for DenseVector {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// `count` vectors of dimension `dim`, stored contiguously, each with a unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBatch {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<u64>,
    row_of: HashMap<u64, usize>,
}

impl VectorBatch {
    pub fn new(dim: usize, data: Vec<f32>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(bad_param("dimension must be at least 1"));
        }
        if data.len() != ids.len() * dim {
            return Err(bad_param(format!(
                "data length {} != count {} x dim {}",
                data.len(),
                ids.len(),
                dim
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(bad_param(format!(
                "row {} component {} is not finite",
                i / dim,
                i % dim
            )));
        }
        let mut row_of = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if row_of.insert(id, row).is_some() {
                return Err(bad_param(format!("duplicate vector id {id}")));
            }
        }
        Ok(Self {
            dim,
            data,
            ids,
            row_of,
        })
    }

    /// Batch whose ids are the row numbers `0..count`.
    pub fn with_sequential_ids(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(bad_param("dimension must be at least 1"));
        }
        let count = data.len() / dim;
        Self::new(dim, data, (0..count as u64).collect())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_dim(dim, row.as_ref().len())?;
            data.extend_from_slice(row.as_ref());
        }
        Self::with_sequential_ids(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn id(&self, row: usize) -> u64 {
        self.ids[row]
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.row_of.get(&id).copied()
    }

    /// The vector with the given id.
    pub fn get(&self, id: u64) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.row(r))
    }

    pub fn vector(&self, row: usize) -> DenseVector {
        DenseVector {
            values: self.row(row).to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> + '_ {
        self.ids
            .iter()
            .copied()
            .zip(self.data.chunks_exact(self.dim))
    }

    /// New batch holding the first `n` rows.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.count());
        Self::new(
            self.dim,
            self.data[..n * self.dim].to_vec(),
            self.ids[..n].to_vec(),
        )
        .expect("prefix of a valid batch is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(DenseVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(DenseVector::new(vec![]).is_err());
        assert!(VectorBatch::new(2, vec![0.0, f32::INFINITY], vec![0]).is_err());
    }

    #[test]
    fn rejects_duplicate_ids_and_bad_length() {
        assert!(VectorBatch::new(1, vec![0.0, 1.0], vec![3, 3]).is_err());
        assert!(VectorBatch::new(2, vec![0.0, 1.0, 2.0], vec![0]).is_err());
    }

    #[test]
    fn lookup_by_id() {
        let b = VectorBatch::new(2, vec![1.0, 2.0, 3.0, 4.0], vec![10, 20]).unwrap();
        assert_eq!(b.get(20), Some(&[3.0, 4.0][..]));
        assert_eq!(b.get(7), None);
        assert_eq!(b.iter().count(), 2);
    }
}
