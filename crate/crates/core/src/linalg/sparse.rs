use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row count above which matrix-vector products split rows across the rayon
/// pool. Each row is reduced serially, so the result does not depend on the
/// thread count.
const PAR_ROWS: usize = 8192;

/// Compressed sparse row matrix with strictly increasing column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::DimensionMismatch(format!("entry ({i}, {j}) outside a {nrows}x{ncols} matrix")));
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut scratch: Vec<(usize, T)> = vec![(0, T::zero()); triplets.len()];
        let mut fill = counts.clone();
        for &(i, j, v) in triplets {
            scratch[fill[i]] = (j, v);
            fill[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut scratch[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(j, _)| j);
            for &(j, v) in row.iter() {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix { nrows, ncols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        CsrMatrix { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: diag.to_vec() }
    }

    /// Dense row-major input, dropping exact zeros.
    pub fn from_dense(rows: &[Vec<T>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut triplets = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::DimensionMismatch("ragged dense matrix".into()));
            }
            for (j, &v) in r.iter().enumerate() {
                if v != T::zero() {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    /// Same sparsity, new values (length must equal `nnz`).
    pub fn with_values(&self, values: Vec<T>) -> Self {
        assert_eq!(values.len(), self.values.len());
        CsrMatrix { values, ..self.clone_pattern() }
    }

    fn clone_pattern(&self) -> Self {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: Vec::new(),
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Position of entry `(i, j)` in the value array, if stored.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.find(i, j).map_or(T::zero(), |k| self.values[k])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let row = |i: usize| -> T {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut s = T::zero();
            for k in lo..hi {
                s += self.values[k] * x[self.col_idx[k]];
            }
            s
        };
        if self.nrows >= PAR_ROWS && rayon::current_num_threads() > 1 {
            y.par_iter_mut().enumerate().with_min_len(1024).for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A y`
    pub fn bilinear(&self, x: &[T], y: &[T]) -> T {
        assert_eq!(x.len(), self.nrows);
        (0..self.nrows).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<T>()).sum()
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn total_sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<(usize, usize, T)> =
            (0..self.nrows).flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v))).collect();
        Self::from_triplets(self.ncols, self.nrows, &triplets).expect("transpose of a valid matrix")
    }

    /// Sparse product `self * other`; column indices stay sorted per row.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.nrows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut acc = vec![T::zero(); other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = T::zero();
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix { nrows: self.nrows, ncols: other.ncols, row_ptr, col_idx, values })
    }

    /// `max |A - A^T| <= tol * max |A|`
    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = self.max_abs();
        (0..self.nrows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * scale))
    }

    /// `self + alpha * other`, union of both patterns.
    pub fn add_scaled(&self, alpha: T, other: &Self) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch("matrix sum of different shapes".into()));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            triplets.extend(self.row(i).map(|(j, v)| (i, j, v)));
            triplets.extend(other.row(i).map(|(j, v)| (i, j, alpha * v)));
        }
        Self::from_triplets(self.nrows, self.ncols, &triplets)
    }

    pub fn scaled(&self, alpha: T) -> Self {
        CsrMatrix { values: self.values.iter().map(|&v| alpha * v).collect(), ..self.clone_pattern() }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}
