//! Dense row-major matrix of `f32` vectors.
//!
//! The same type holds datapoints, query sets and codebooks.

use crate::error::{Error, Result};

/// An `n x d` row-major matrix of finite `f32` values. Row `i` is the
/// vector with datapoint id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    data: Vec<f32>,
    n: usize,
    d: usize,
}

impl Dataset {
    /// Builds a dataset from row-major storage, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(data: Vec<f32>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d", "dimensionality must be at least 1"));
        }
        if data.is_empty() {
            return Err(Error::invalid("n", "dataset must hold at least one row"));
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::invalid(
                "data",
                format!("length {} is not a multiple of d={d}", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        let n = data.len() / d;
        Ok(Self { data, n, d })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, d)
    }

    /// Internal constructor for buffers whose shape and contents are already
    /// known to be valid.
    pub(crate) fn from_parts_unchecked(data: Vec<f32>, n: usize, d: usize) -> Self {
        debug_assert_eq!(data.len(), n * d);
        Self { data, n, d }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            if i >= self.n {
                return Err(Error::invalid("ids", format!("row {i} out of range (n={})", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(data, self.d)
    }

    /// Returns a copy with every row scaled to unit L2 norm. Zero rows are
    /// left untouched.
    pub fn normalized(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.d) {
            let norm = crate::vector::sq_norm64(row).sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        }
        Self::from_parts_unchecked(data, self.n, self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Dataset::new(vec![], 2).is_err());
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(Dataset::new(vec![1.0], 0).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = Dataset::new(vec![1.0, 2.0, f32::NAN, 0.0], 2).unwrap_err();
        assert_eq!(err, Error::NonFinite { row: 1, col: 0 });
        assert!(Dataset::new(vec![f32::INFINITY], 1).is_err());
    }

    #[test]
    fn rows_are_addressable() {
        let x = Dataset::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(x.n(), 3);
        assert_eq!(x.d(), 2);
        assert_eq!(x.row(1), &[3.0, 4.0]);
        assert_eq!(x.rows().count(), 3);
        let s = x.select(&[2, 0]).unwrap();
        assert_eq!(s.as_slice(), &[5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let x = Dataset::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let u = x.normalized();
        assert!((u.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((u.row(0)[1] - 0.8).abs() < 1e-7);
        assert_eq!(u.row(1), &[0.0, 0.0]);
    }
}
