//! Symmetric banded storage and Cholesky factorization. The structured mesh
//! numbers degrees of freedom row by row, so every operator we factor at the
//! truth level has half bandwidth ~ nx+2; a banded LL^T is exact and keeps the
//! truth solve at O(N * bw^2).

use crate::error::{Error, Result};
use crate::la::sparse::Csr;

/// Lower band of a symmetric matrix, LAPACK-style column layout:
/// entry (i, j) with j <= i <= j + hbw lives at `data[j * (hbw + 1) + (i - j)]`.
#[derive(Debug, Clone)]
pub struct SymBand {
    pub n: usize,
    pub hbw: usize,
    pub data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, hbw: usize) -> Self {
        SymBand { n, hbw, data: vec![0.0; n * (hbw + 1)] }
    }

    pub fn from_csr(m: &Csr) -> Result<Self> {
        if m.nrows != m.ncols {
            return Err(Error::Dimension("banded storage needs a square matrix".into()));
        }
        let hbw = m.half_bandwidth();
        let mut band = SymBand::zeros(m.nrows, hbw);
        for i in 0..m.nrows {
            for (j, v) in m.row(i) {
                if j <= i {
                    band.data[j * (hbw + 1) + (i - j)] = v;
                }
            }
        }
        Ok(band)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i >= j { (j, i) } else { (i, j) };
        if hi - lo > self.hbw {
            0.0
        } else {
            self.data[lo * (self.hbw + 1) + (hi - lo)]
        }
    }

    /// self += scale * other. Both operands must share (n, hbw); affine
    /// operator components are padded to a common bandwidth when built.
    pub fn axpy(&mut self, scale: f64, other: &SymBand) {
        assert_eq!(self.n, other.n);
        assert_eq!(self.hbw, other.hbw);
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn pad_to_bandwidth(&self, hbw: usize) -> SymBand {
        assert!(hbw >= self.hbw);
        let mut out = SymBand::zeros(self.n, hbw);
        for j in 0..self.n {
            for d in 0..=self.hbw.min(self.n - 1 - j) {
                out.data[j * (hbw + 1) + d] = self.data[j * (self.hbw + 1) + d];
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        let w = self.hbw + 1;
        for j in 0..self.n {
            let dmax = self.hbw.min(self.n - 1 - j);
            let col = &self.data[j * w..j * w + dmax + 1];
            y[j] += col[0] * x[j];
            for d in 1..=dmax {
                y[j + d] += col[d] * x[j];
                y[j] += col[d] * x[j + d];
            }
        }
    }

    /// In-place right-looking Cholesky; fails on a non-positive pivot.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let hbw = self.hbw;
        let w = hbw + 1;
        let mut a = self.data.clone();
        for j in 0..n {
            let pivot = a[j * w];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot });
            }
            let d = pivot.sqrt();
            a[j * w] = d;
            let dmax = hbw.min(n - 1 - j);
            for r in 1..=dmax {
                a[j * w + r] /= d;
            }
            // Rank-1 update of the trailing columns that overlap column j's band.
            for k in 1..=dmax {
                let ljk = a[j * w + k];
                if ljk == 0.0 {
                    continue;
                }
                let col_k = (j + k) * w;
                for r in k..=dmax {
                    a[col_k + (r - k)] -= ljk * a[j * w + r];
                }
            }
        }
        Ok(BandCholesky { n, hbw, data: a })
    }
}

/// Factor L with A = L L^T in the same banded layout.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    pub n: usize,
    pub hbw: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let w = self.hbw + 1;
        // L y = b
        for j in 0..n {
            let yj = b[j] / self.data[j * w];
            b[j] = yj;
            let dmax = self.hbw.min(n - 1 - j);
            for d in 1..=dmax {
                b[j + d] -= self.data[j * w + d] * yj;
            }
        }
        // L^T x = y
        for j in (0..n).rev() {
            let dmax = self.hbw.min(n - 1 - j);
            let mut acc = b[j];
            for d in 1..=dmax {
                acc -= self.data[j * w + d] * b[j + d];
            }
            b[j] = acc / self.data[j * w];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Forward substitution only: solves L y = b. Used to push vectors into
    /// the inner-product-orthonormal coordinates of A = L L^T.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        let n = self.n;
        let w = self.hbw + 1;
        for j in 0..n {
            let yj = y[j] / self.data[j * w];
            y[j] = yj;
            let dmax = self.hbw.min(n - 1 - j);
            for d in 1..=dmax {
                y[j + d] -= self.data[j * w + d] * yj;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::la::sparse::Coo;
    use approx::assert_relative_eq;

    fn laplacian_1d(n: usize) -> Csr {
        let mut coo = Coo::new(n, n);
        for i in 0..n {
            coo.push(i, i, 2.0);
            if i + 1 < n {
                coo.push(i, i + 1, -1.0);
                coo.push(i + 1, i, -1.0);
            }
        }
        coo.to_csr()
    }

    #[test]
    fn cholesky_solves_tridiagonal() {
        let a = laplacian_1d(50);
        let band = SymBand::from_csr(&a).unwrap();
        let chol = band.cholesky().unwrap();
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.matvec_alloc(&x_true);
        let x = chol.solve(&b);
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert_relative_eq!(xi, ti, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut coo = Coo::new(2, 2);
        coo.push(0, 0, 1.0);
        coo.push(1, 1, -1.0);
        let band = SymBand::from_csr(&coo.to_csr()).unwrap();
        assert!(band.cholesky().is_err());
    }

    #[test]
    fn matvec_matches_csr() {
        let a = laplacian_1d(17);
        let band = SymBand::from_csr(&a).unwrap();
        let x: Vec<f64> = (0..17).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let mut y = vec![0.0; 17];
        band.matvec(&x, &mut y);
        let y_ref = a.matvec_alloc(&x);
        for (a, b) in y.iter().zip(y_ref.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn forward_solve_gives_orthonormal_coordinates() {
        let a = laplacian_1d(12);
        let band = SymBand::from_csr(&a).unwrap();
        let chol = band.cholesky().unwrap();
        // <x, y>_A = (L^T x) . (L^T y); check via || L^{-1} (A x) ||^2 = x^T A x.
        let x: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let ax = a.matvec_alloc(&x);
        let z = chol.forward_solve(&ax);
        let lhs: f64 = z.iter().map(|v| v * v).sum();
        let rhs = a.bilinear(&x, &x);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }
}
