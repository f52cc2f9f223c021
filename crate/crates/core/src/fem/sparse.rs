//! Compressed sparse rows over the 27-point node neighbourhood.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;

/// Rows below this length are multiplied sequentially.
const PAR_MIN_ROWS: usize = 4096;

/// Row pointers and sorted column indices shared by every block assembled on
/// the same grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Couples every node with its (up to) 26 lattice neighbours.
    pub fn for_grid(grid: &SpaceTimeGrid) -> Self {
        let n = grid.node_count();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(27 * n);
        row_ptr.push(0);
        let range = |p: usize, len: usize| p.saturating_sub(1)..(p + 2).min(len);
        for k in 0..grid.frames() {
            for i in 0..grid.height() {
                for j in 0..grid.width() {
                    for kk in range(k, grid.frames()) {
                        for ii in range(i, grid.height()) {
                            for jj in range(j, grid.width()) {
                                col_idx.push(grid.index(kk, ii, jj));
                            }
                        }
                    }
                    row_ptr.push(col_idx.len());
                }
            }
        }
        Self { n, row_ptr, col_idx }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    /// Position of `(r, c)` in the value array.
    #[inline]
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let start = self.row_ptr[r];
        self.row(r).binary_search(&c).ok().map(|p| start + p)
    }
}

/// Square sparse matrix in compressed row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_values(pattern: Arc<SparsityPattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::LengthMismatch { what: "matrix values", got: values.len(), expected: pattern.nnz() });
        }
        Ok(Self { pattern, values })
    }

    /// Identity on the given pattern (diagonal must be present).
    pub fn identity(pattern: Arc<SparsityPattern>) -> Self {
        let mut m = Self::zeros(pattern);
        for r in 0..m.dim() {
            let p = m.pattern.position(r, r).expect("diagonal in pattern");
            m.values[p] = 1.0;
        }
        m
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pattern.position(r, c).map_or(0.0, |p| self.values[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|r| self.get(r, r)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let rp = &self.pattern.row_ptr;
        (0..self.dim()).map(|r| self.values[rp[r]..rp[r + 1]].iter().sum()).collect()
    }

    /// `self + other` on a shared pattern.
    pub fn add(&self, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.pattern != other.pattern {
            return Err(Error::LengthMismatch { what: "matrix pattern", got: other.pattern.nnz(), expected: self.pattern.nnz() });
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self { pattern: Arc::clone(&self.pattern), values })
    }

    pub fn scaled(&self, c: f64) -> CsrMatrix {
        Self { pattern: Arc::clone(&self.pattern), values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `y ← A x`; rows are independent so the result does not depend on the
    /// thread count.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let rp = &self.pattern.row_ptr;
        let ci = &self.pattern.col_idx;
        let row = |r: usize| -> f64 {
            let mut acc = 0.0;
            for p in rp[r]..rp[r + 1] {
                acc += self.values[p] * x[ci[p]];
            }
            acc
        };
        if y.len() >= PAR_MIN_ROWS {
            y.par_iter_mut().enumerate().with_min_len(1024).for_each(|(r, out)| *out = row(r));
        } else {
            y.iter_mut().enumerate().for_each(|(r, out)| *out = row(r));
        }
    }

    /// `y ← y + A x`.
    pub fn mul_vec_add(&self, x: &[f64], y: &mut [f64]) {
        let rp = &self.pattern.row_ptr;
        let ci = &self.pattern.col_idx;
        let row = |r: usize| -> f64 {
            let mut acc = 0.0;
            for p in rp[r]..rp[r + 1] {
                acc += self.values[p] * x[ci[p]];
            }
            acc
        };
        if y.len() >= PAR_MIN_ROWS {
            y.par_iter_mut().enumerate().with_min_len(1024).for_each(|(r, out)| *out += row(r));
        } else {
            y.iter_mut().enumerate().for_each(|(r, out)| *out += row(r));
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    /// Largest `|A_rc − A_cr|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry_against(self)
    }

    /// Largest `|A_rc − B_cr|` relative to the largest entry of either matrix.
    pub fn asymmetry_against(&self, other: &CsrMatrix) -> f64 {
        let scale = self
            .values
            .iter()
            .chain(&other.values)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.dim() {
            for (p, &c) in (self.pattern.row_ptr[r]..).zip(self.pattern.row(r)) {
                worst = worst.max((self.values[p] - other.get(c, r)).abs());
            }
        }
        worst / scale
    }

    /// Dense row-major copy; intended for small test problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (r, row) in d.iter_mut().enumerate() {
            for (p, &c) in (self.pattern.row_ptr[r]..).zip(self.pattern.row(r)) {
                row[c] = self.values[p];
            }
        }
        d
    }
}
