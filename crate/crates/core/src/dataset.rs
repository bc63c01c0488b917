//! In-memory vector collections addressed by dense ids.

use crate::error::{Error, Result};

/// Identity of a base vector. Dense in `[0, N)` and stable across every stage.
pub type VectorId = u32;

/// Row-major float32 vectors of a single dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDataset {
    dim: usize,
    data: Vec<f32>,
}

impl VectorDataset {
    /// Wraps a flat row-major buffer. Rejects empty data, ragged lengths and
    /// non-finite components.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::invalid("dataset must contain at least one vector"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::format(format!(
                "buffer of {} floats is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if data.len() / dim > VectorId::MAX as usize {
            return Err(Error::invalid("too many vectors for 32-bit ids"));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::format(format!(
                "non-finite component in vector {} (dim {})",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::invalid("dataset must contain at least one vector"))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false for a constructed dataset; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, id: VectorId) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn get(&self, id: VectorId) -> Result<&[f32]> {
        if (id as usize) < self.len() {
            Ok(self.row(id))
        } else {
            Err(Error::IdOutOfRange {
                id,
                len: self.len(),
            })
        }
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Copies the given rows, in the given order, into a new dataset.
    pub fn select(&self, ids: &[VectorId]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            data.extend_from_slice(self.get(id)?);
        }
        Self::new(self.dim, data)
    }

    /// Fails unless every id is a valid row index.
    pub fn check_ids(&self, ids: &[VectorId]) -> Result<()> {
        let len = self.len();
        match ids.iter().find(|&&id| id as usize >= len) {
            Some(&id) => Err(Error::IdOutOfRange { id, len }),
            None => Ok(()),
        }
    }
}

/// Exact nearest-neighbor lists, nearest first, one row per query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    k: usize,
    rows: Vec<Vec<VectorId>>,
}

impl GroundTruth {
    pub fn new(rows: Vec<Vec<VectorId>>) -> Result<Self> {
        let k = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("ground truth needs at least one query"))?;
        if k == 0 {
            return Err(Error::invalid("ground truth rows must be non-empty"));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::format(format!(
                "ground truth row of length {} where {k} expected",
                bad.len()
            )));
        }
        Ok(Self { k, rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<VectorId>] {
        &self.rows
    }

    pub fn row(&self, query: usize) -> &[VectorId] {
        &self.rows[query]
    }

    /// Checks that every id refers to a vector of a base set of size `n`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        for row in &self.rows {
            if let Some(&id) = row.iter().find(|&&id| id as usize >= n) {
                return Err(Error::IdOutOfRange { id, len: n });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(VectorDataset::new(0, vec![1.0]).is_err());
        assert!(VectorDataset::new(2, vec![]).is_err());
        assert!(VectorDataset::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(VectorDataset::new(1, vec![f32::NAN]).is_err());
        assert!(VectorDataset::new(1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn rows_and_select() {
        let ds = VectorDataset::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.row(1), &[2.0, 3.0]);
        let sub = ds.select(&[2, 0]).unwrap();
        assert_eq!(sub.as_flat(), &[4.0, 5.0, 0.0, 1.0]);
        assert!(matches!(
            ds.get(3),
            Err(Error::IdOutOfRange { id: 3, len: 3 })
        ));
    }

    #[test]
    fn ground_truth_requires_uniform_rows() {
        assert!(GroundTruth::new(vec![vec![1, 2], vec![3]]).is_err());
        let gt = GroundTruth::new(vec![vec![1, 2], vec![3, 0]]).unwrap();
        assert_eq!(gt.k(), 2);
        assert!(gt.validate_for(4).is_ok());
        assert!(gt.validate_for(3).is_err());
    }
}
