//! Computable stability constants of the assimilation problem.
//!
//! Everything reduces to small generalized eigenproblems over the space of
//! corrected states H0(mu) = {(u, y_mu(u))}, which is parametrized by the
//! correction coordinates. The Gram matrices assembled here are the only
//! large-scale quantities involved.

use crate::assimilate::MeasurementSpace;
use crate::error::{Error, Result};
use crate::la::{gen_eigen_psd_range, gen_eigen_spd, mgs_orthonormalize, smallest_singular_value_inf};
use crate::model::ThermalBlockModel;
use nalgebra::{DMatrix, DVector};

/// Responses of the correction basis at a fixed parameter with the Gram
/// matrices needed by the constant evaluations. The correction basis is the
/// canonical coordinate basis of the model's trace space.
pub struct ResponseBasis {
    pub mu: Vec<f64>,
    /// y_m = A(mu)^{-1} B0 phi_m, one column per correction mode.
    pub responses: DMatrix<f64>,
    /// Background state at mu (same factorization, reused by pair constants).
    pub y_bk: DVector<f64>,
    /// U-inner products of the correction basis.
    pub g_u: DMatrix<f64>,
    /// Y-inner products of the responses.
    pub g_y: DMatrix<f64>,
    /// Y-inner products of the projected responses Pi_T y_m.
    pub g_proj: DMatrix<f64>,
}

pub fn build_response_basis(
    model: &ThermalBlockModel,
    ms: &MeasurementSpace,
    mu: &[f64],
) -> Result<ResponseBasis> {
    let chol = model.factor(mu)?;
    let responses = model.responses(&chol);
    let y_bk = model.background_state(&chol);
    let m = model.m_u();
    let mut k_resp = DMatrix::zeros(model.n(), m);
    for j in 0..m {
        let col: Vec<f64> = responses.column(j).iter().copied().collect();
        k_resp.set_column(j, &DVector::from_vec(model.space.gram.matvec_alloc(&col)));
    }
    let mut g_y = responses.transpose() * k_resp;
    g_y = (&g_y + g_y.transpose()) * 0.5;
    let c = ms.khat.transpose() * &responses;
    let g_proj = c.transpose() * c;
    Ok(ResponseBasis {
        mu: mu.to_vec(),
        responses,
        y_bk,
        g_u: model.trace.mass.clone(),
        g_y,
        g_proj,
    })
}

/// Inf-sup constant of the measurement space over the response space Y_mu:
/// the worst-case fraction of a response visible to the sensors.
pub fn kappa_t(rb: &ResponseBasis) -> Result<f64> {
    if rb.g_y.trace() <= 0.0 {
        return Err(Error::invalid("kappa undefined for a trivial response space"));
    }
    let eigs = gen_eigen_psd_range(&rb.g_proj, &rb.g_y, 1e-12)?;
    let lam = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(lam.clamp(0.0, 1.0).sqrt())
}

/// Smallest and largest ratio ||y_mu(u)||_Y / ||u||_U over the corrections.
pub fn eta_ratios(rb: &ResponseBasis) -> Result<(f64, f64)> {
    let (vals, _) = gen_eigen_spd(&rb.g_y, &rb.g_u)?;
    let lo = vals.first().copied().unwrap_or(0.0).max(0.0);
    let hi = vals.last().copied().unwrap_or(0.0).max(0.0);
    Ok((lo.sqrt(), hi.sqrt()))
}

/// Piecewise lower bound for the H0(mu)-coercivity of the penalized form.
pub fn alpha_a_lower_bound(lambda: f64, eta_low: f64, eta_high: f64, kappa: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    if !(0.0 <= eta_low && eta_low <= eta_high) {
        return Err(Error::invalid(format!(
            "eta ratios must satisfy 0 <= {eta_low} <= {eta_high}"
        )));
    }
    if !(0.0..=1.0 + 1e-12).contains(&kappa) {
        return Err(Error::invalid(format!("kappa must lie in [0,1], got {kappa}")));
    }
    let lk2 = lambda * kappa * kappa;
    let value = if lk2 <= 1.0 {
        (1.0 + lk2 * eta_high * eta_high) / (1.0 + eta_high * eta_high)
    } else {
        (1.0 + lk2 * eta_low * eta_low) / (1.0 + eta_low * eta_low)
    };
    Ok(value)
}

/// Exact H0(mu)-coercivity constant of the penalized form at (mu, lambda).
pub fn delta_true(rb: &ResponseBasis, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let a = &rb.g_u + lambda * &rb.g_proj;
    let b = &rb.g_u + &rb.g_y;
    let (vals, _) = gen_eigen_spd(&a, &b)?;
    Ok(vals.first().copied().unwrap_or(0.0).max(0.0))
}

/// Inf-sup constant of the coupling form between a correction subspace
/// (columns of `u_basis`, trace coordinates) and a Y-orthonormal subspace
/// basis (columns of `w`). The coupling itself is parameter independent.
pub fn beta_b(
    model: &ThermalBlockModel,
    u_basis: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<f64> {
    if w.ncols() == 0 || u_basis.ncols() == 0 {
        return Err(Error::invalid("beta_b needs nonempty subspace bases"));
    }
    let z = u_basis.transpose() * model.b0.transpose() * w;
    let g_u = u_basis.transpose() * &model.trace.mass * u_basis;
    let mass_chol = nalgebra::linalg::Cholesky::new(g_u)
        .ok_or_else(|| Error::numerical("correction subspace Gram is not SPD"))?;
    // Substituting a = L^{-T} a~ turns the U-norm into the Euclidean one,
    // leaving the singular values of L^{-1} Z.
    let lz = mass_chol
        .l()
        .solve_lower_triangular(&z)
        .ok_or_else(|| Error::numerical("singular correction mass factor"))?;
    Ok(smallest_singular_value_inf(&lz.transpose()))
}

/// Inf-sup constant of the measurement space over the joint span used in
/// parameter estimation: backgrounds and responses at both parameters.
pub fn beta_t_pair(
    model: &ThermalBlockModel,
    ms: &MeasurementSpace,
    rb_mu: &ResponseBasis,
    rb_nu: &ResponseBasis,
) -> Result<f64> {
    let mut vectors: Vec<DVector<f64>> = vec![rb_mu.y_bk.clone(), rb_nu.y_bk.clone()];
    for j in 0..rb_mu.responses.ncols() {
        vectors.push(rb_mu.responses.column(j).into_owned());
    }
    for j in 0..rb_nu.responses.ncols() {
        vectors.push(rb_nu.responses.column(j).into_owned());
    }
    let ip = |a: &DVector<f64>, b: &DVector<f64>| model.space.y_inner(a.as_slice(), b.as_slice());
    let (basis, _) = mgs_orthonormalize(&vectors, ip, 1e-10);
    if basis.is_empty() {
        return Err(Error::invalid("beta_T span is degenerate"));
    }
    let mut q = DMatrix::zeros(model.n(), basis.len());
    for (k, b) in basis.iter().enumerate() {
        q.set_column(k, b);
    }
    let c = ms.khat.transpose() * q;
    Ok(smallest_singular_value_inf(&c).clamp(0.0, 1.0))
}

/// A priori bounds on the solution norms from the saddle-point theory:
/// returns (bound on ||(u,y)||_H, bound on ||p||_Y). The constraint inf-sup
/// constant is bounded from below by the coercivity constant of a,
/// so `alpha_a_lb` plays that role here.
pub fn brezzi_stability_coefficients(
    alpha_a_lb: f64,
    lambda: f64,
    delta: f64,
    y_d_norm: f64,
    f_bk_dual_norm: f64,
) -> Result<(f64, f64)> {
    if delta <= 0.0 {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    if alpha_a_lb <= 0.0 {
        return Err(Error::invalid("stability coefficients need a positive inf-sup bound"));
    }
    if !(lambda >= 0.0) || y_d_norm < 0.0 || f_bk_dual_norm < 0.0 {
        return Err(Error::invalid("stability inputs must be nonnegative"));
    }
    let gamma_a = lambda.max(1.0);
    let beta = alpha_a_lb;
    let amplification = gamma_a / delta + 1.0;
    let state = lambda * y_d_norm / delta + f_bk_dual_norm / beta * amplification;
    let adjoint = lambda * y_d_norm / beta * amplification
        + gamma_a * f_bk_dual_norm / (beta * beta) * amplification;
    Ok((state, adjoint))
}
