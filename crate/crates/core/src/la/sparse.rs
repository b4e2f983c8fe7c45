//! Minimal sparse types used for assembly, matvecs and export. Factorizations
//! go through the banded path in `band`; everything small stays dense.

use crate::error::{Error, Result};

/// Triplet accumulator for finite-element assembly. Duplicate entries sum.
#[derive(Debug, Clone)]
pub struct Coo {
    pub nrows: usize,
    pub ncols: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

impl Coo {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Coo { nrows, ncols, triplets: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.triplets.push((row, col, value));
        }
    }

    pub fn to_csr(&self) -> Csr {
        let mut entries: Vec<(usize, usize, f64)> = self.triplets.clone();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        let mut row = 0usize;
        for &(r, c, v) in &entries {
            while row < r {
                indptr.push(indices.len());
                row += 1;
            }
            if let (Some(&last_c), Some(last_v)) = (indices.last(), data.last_mut()) {
                if indices.len() > indptr[row] && last_c == c {
                    *last_v += v;
                    continue;
                }
            }
            indices.push(c);
            data.push(v);
        }
        while row < self.nrows {
            indptr.push(indices.len());
            row += 1;
        }
        Csr { nrows: self.nrows, ncols: self.ncols, indptr, indices, data }
    }
}

/// Compressed sparse rows. Column indices are sorted within each row.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        self.indices[lo..hi].iter().copied().zip(self.data[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// x^T (A y); A must be square for the common Gram use, but any shapes
    /// with matching dimensions are accepted.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for i in 0..self.nrows {
            let lo = self.indptr[i];
            let hi = self.indptr[i + 1];
            let mut row_acc = 0.0;
            for k in lo..hi {
                row_acc += self.data[k] * y[self.indices[k]];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    /// Half bandwidth max|i-j| over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        let mut hbw = 0usize;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                hbw = hbw.max(i.abs_diff(j));
            }
        }
        hbw
    }

    /// Relative symmetry defect, max over stored entries. Used by sanity checks.
    pub fn symmetry_defect(&self) -> Result<f64> {
        if self.nrows != self.ncols {
            return Err(Error::Dimension("symmetry check on a non-square matrix".into()));
        }
        let mut scale = 0.0f64;
        for &v in &self.data {
            scale = scale.max(v.abs());
        }
        if scale == 0.0 {
            return Ok(0.0);
        }
        let mut defect = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let vt = self.get(j, i);
                defect = defect.max((v - vt).abs());
            }
        }
        Ok(defect / scale)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        match self.indices[lo..hi].binary_search(&j) {
            Ok(pos) => self.data[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// self + scale * other, entry-wise on the union sparsity pattern.
    pub fn add_scaled(&self, other: &Csr, scale: f64) -> Csr {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut coo = Coo::new(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                coo.push(i, j, v);
            }
            for (j, v) in other.row(i) {
                coo.push(i, j, scale * v);
            }
        }
        coo.to_csr()
    }
}
