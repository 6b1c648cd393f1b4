//! Small linear-algebra helpers: a CSR sparse matrix and dense bridges to nalgebra.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row_entries(r)
            .find(|&(j, _)| j == c)
            .map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.nrows) {
            *out = self.row_entries(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `self * dense`
    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.ncols {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} * {}x{}", self.nrows, self.ncols, x.rows(), x.cols()),
            ));
        }
        let mut out = Tensor::zeros(self.nrows, x.cols());
        for r in 0..self.nrows {
            for (c, v) in self.row_entries(r) {
                for (o, s) in out.row_mut(r).iter_mut().zip(x.row(c)) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * dense`
    pub fn mul_dense_transposed(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.nrows {
            return Err(Error::shape(
                "spmm^T",
                format!("({}x{})^T * {}x{}", self.nrows, self.ncols, x.rows(), x.cols()),
            ));
        }
        let mut out = Tensor::zeros(self.ncols, x.cols());
        for r in 0..self.nrows {
            for (c, v) in self.row_entries(r) {
                let dst = out.row_mut(c);
                for (o, s) in dst.iter_mut().zip(x.row(r)) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row_entries(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.nrows).all(|r| {
            self.row_entries(r)
                .all(|(c, v)| (self.get(c, r) - v).abs() <= tol * (1.0 + v.abs()))
        })
    }
}

pub fn tensor_to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn dmatrix_to_tensor(m: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}
