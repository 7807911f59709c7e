//! Compressed sparse row matrices used for fixed linear maps over node fields
//! (stochastic-projection derivative operators, their compositions).

use ndarray::{Array2, ArrayView2};

/// Row-major sparse matrix. Column indices within a row are kept sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists. Duplicate columns are summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < ncols, "column {c} out of bounds for {ncols} columns");
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
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// `self · x` for a dense `ncols × c` matrix.
    pub fn matmul(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.ncols, "sparse matmul shape mismatch");
        let c = x.ncols();
        let mut out = Array2::<f64>::zeros((self.nrows, c));
        for i in 0..self.nrows {
            let mut orow = out.row_mut(i);
            for (j, v) in self.row(i) {
                orow.scaled_add(v, &x.row(j));
            }
        }
        out
    }

    /// `selfᵀ · x` for a dense `nrows × c` matrix, without materializing the transpose.
    pub fn matmul_transpose(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.nrows, "sparse transpose matmul shape mismatch");
        let c = x.ncols();
        let mut out = Array2::<f64>::zeros((self.ncols, c));
        for i in 0..self.nrows {
            let xrow = x.row(i);
            for (j, v) in self.row(i) {
                out.row_mut(j).scaled_add(v, &xrow);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(self.nrows, rows)
    }

    /// Sparse product `self · other`.
    pub fn compose(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows, "sparse compose shape mismatch");
        let mut rows = Vec::with_capacity(self.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.ncols];
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            let mut row = Vec::with_capacity(touched.len());
            for &j in &touched {
                row.push((j, acc[j]));
                acc[j] = 0.0;
                mark[j] = false;
            }
            touched.clear();
            rows.push(row);
        }
        Self::from_rows(other.ncols, rows)
    }

    /// `alpha·self + beta·other`.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let rows = (0..self.nrows)
            .map(|i| {
                self.row(i)
                    .map(|(j, v)| (j, alpha * v))
                    .chain(other.row(i).map(|(j, v)| (j, beta * v)))
                    .collect()
            })
            .collect();
        Self::from_rows(self.ncols, rows)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out[[i, j]] += v;
            }
        }
        out
    }
}
