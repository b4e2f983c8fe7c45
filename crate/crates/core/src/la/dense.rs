//! Dense helpers on top of nalgebra: sorted symmetric eigensolves,
//! generalized symmetric eigenproblems via Cholesky (or truncated-eigen)
//! whitening, and modified Gram-Schmidt in an arbitrary inner product.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
/// Columns of the returned matrix are the matching eigenvectors.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    assert_eq!(m.nrows(), m.ncols());
    let eig = nalgebra::linalg::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Generalized symmetric eigenproblem A v = lambda B v with B SPD.
/// Whitening: B = L L^T, solve the ordinary problem for L^{-1} A L^{-T} and
/// map eigenvectors back through L^{-T}.
pub fn gen_eigen_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    assert_eq!(a.nrows(), a.ncols());
    assert_eq!(a.shape(), b.shape());
    let chol = nalgebra::linalg::Cholesky::new(b.clone())
        .ok_or_else(|| Error::numerical("right-hand matrix in generalized eigenproblem is not SPD"))?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    let w = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    // w = L^{-1} A^T L^{-T}; A symmetric so w is the whitened operator (up to roundoff).
    let w = (&w + w.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_sorted(&w);
    let back = l
        .transpose()
        .solve_upper_triangular(&vecs)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    Ok((vals, back))
}

/// Eigenvalues of A restricted to the range of a PSD matrix B, i.e. the
/// generalized problem with rank-deficient B. Directions of B with eigenvalue
/// below `rel_trunc * trace(B)` are discarded before whitening.
pub fn gen_eigen_psd_range(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rel_trunc: f64,
) -> Result<Vec<f64>> {
    assert_eq!(a.shape(), b.shape());
    let (bvals, bvecs) = sym_eigen_sorted(b);
    let trace: f64 = bvals.iter().sum();
    if !(trace > 0.0) {
        return Err(Error::numerical(
            "right-hand matrix in generalized eigenproblem has non-positive trace",
        ));
    }
    let thresh = rel_trunc * trace;
    let kept: Vec<usize> = (0..bvals.len()).filter(|&i| bvals[i] > thresh).collect();
    if kept.is_empty() {
        return Err(Error::numerical("generalized eigenproblem: all directions truncated"));
    }
    let n = b.nrows();
    let mut w = DMatrix::zeros(n, kept.len());
    for (k, &i) in kept.iter().enumerate() {
        let scale = 1.0 / bvals[i].sqrt();
        w.set_column(k, &(bvecs.column(i) * scale));
    }
    let m = w.transpose() * a * &w;
    let m = (&m + m.transpose()) * 0.5;
    let (vals, _) = sym_eigen_sorted(&m);
    Ok(vals)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass in the inner
/// product `ip`. Vectors whose remainder drops below `drop_tol` times their
/// original norm are skipped. Returns the orthonormal set and, per kept
/// vector, the index it came from.
pub fn mgs_orthonormalize<F>(
    vectors: &[DVector<f64>],
    ip: F,
    drop_tol: f64,
) -> (Vec<DVector<f64>>, Vec<usize>)
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> f64,
{
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for (idx, v) in vectors.iter().enumerate() {
        let norm0 = ip(v, v).max(0.0).sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _pass in 0..2 {
            for q in &basis {
                let c = ip(q, &w);
                w.axpy(-c, q, 1.0);
            }
        }
        let norm = ip(&w, &w).max(0.0).sqrt();
        if norm <= drop_tol * norm0 {
            continue;
        }
        w /= norm;
        basis.push(w);
        kept.push(idx);
    }
    (basis, kept)
}

/// Singular values of a dense matrix, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// min_x ||M x|| over unit x (counts a wide matrix's nullspace as zero).
pub fn smallest_singular_value_inf(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    *singular_values(m).last().unwrap_or(&0.0)
}
