//! The correction space on the inflow edge: polynomials up to a fixed degree,
//! represented in a Legendre basis orthonormalized in L2 of the edge. Also
//! holds piecewise-linear edge traces (truth corrections live on the edge
//! grid, not necessarily in the polynomial space).

use crate::error::{Error, Result};
use crate::mesh_fem::quadrature::gauss_legendre_5;
use crate::mesh_fem::space::{FESpace, InflowSegment};
use nalgebra::{DMatrix, DVector};

/// Shifted Legendre polynomial value P_k(2x - 1) on [0, 1].
pub fn shifted_legendre(k: usize, x: f64) -> f64 {
    let t = 2.0 * x - 1.0;
    let mut p_prev = 1.0;
    if k == 0 {
        return p_prev;
    }
    let mut p = t;
    for m in 1..k {
        let next = ((2 * m + 1) as f64 * t * p - m as f64 * p_prev) / (m + 1) as f64;
        p_prev = p;
        p = next;
    }
    p
}

pub struct BoundaryTraceSpace {
    pub degree: usize,
    pub dim: usize,
    /// Gram matrix of the basis over the edge; identity up to quadrature roundoff.
    pub mass: DMatrix<f64>,
    segments: Vec<InflowSegment>,
}

impl BoundaryTraceSpace {
    pub fn new(space: &FESpace, degree: usize) -> Result<Self> {
        if degree > 12 {
            return Err(Error::invalid("polynomial degree above 12 is not supported"));
        }
        let segments = space.inflow_segments();
        if segments.is_empty() {
            return Err(Error::Mesh("mesh has no inflow edge".into()));
        }
        let dim = degree + 1;
        let rule = gauss_legendre_5();
        let mut mass = DMatrix::zeros(dim, dim);
        for seg in &segments {
            let h = seg.xb - seg.xa;
            for (q, w) in rule {
                let x = seg.xa + h * q;
                for i in 0..dim {
                    let bi = basis_value(i, x);
                    for j in 0..dim {
                        mass[(i, j)] += w * h * bi * basis_value(j, x);
                    }
                }
            }
        }
        Ok(BoundaryTraceSpace { degree, dim, mass, segments })
    }

    pub fn segments(&self) -> &[InflowSegment] {
        &self.segments
    }

    /// Value of the polynomial with the given coefficients at edge coordinate x.
    pub fn eval(&self, coeffs: &DVector<f64>, x: f64) -> f64 {
        (0..self.dim.min(coeffs.len())).map(|m| coeffs[m] * basis_value(m, x)).sum()
    }

    /// Coupling matrix between edge polynomials and the bulk space:
    /// column m holds the load vector of psi -> int_edge phi_m psi.
    pub fn couple_matrix(&self, space: &FESpace) -> DMatrix<f64> {
        let rule = gauss_legendre_5();
        let mut b0 = DMatrix::zeros(space.n, self.dim);
        for seg in &self.segments {
            let h = seg.xb - seg.xa;
            for (q, w) in rule {
                let x = seg.xa + h * q;
                let hat_a = 1.0 - q;
                let hat_b = q;
                for m in 0..self.dim {
                    let phi = basis_value(m, x);
                    b0[(seg.dof_a, m)] += w * h * phi * hat_a;
                    b0[(seg.dof_b, m)] += w * h * phi * hat_b;
                }
            }
        }
        b0
    }

    /// Load vector of psi -> int_edge u psi for a piecewise-linear edge trace
    /// given by its nodal values in x order (exact segment integrals).
    pub fn b_vector_from_p1(&self, n_dofs: usize, values: &[f64]) -> Result<DVector<f64>> {
        if values.len() != self.segments.len() + 1 {
            return Err(Error::Dimension(format!(
                "edge trace needs {} nodal values, got {}",
                self.segments.len() + 1,
                values.len()
            )));
        }
        let mut b = DVector::zeros(n_dofs);
        for (s, seg) in self.segments.iter().enumerate() {
            let h = seg.xb - seg.xa;
            let (va, vb) = (values[s], values[s + 1]);
            b[seg.dof_a] += h / 6.0 * (2.0 * va + vb);
            b[seg.dof_b] += h / 6.0 * (va + 2.0 * vb);
        }
        Ok(b)
    }

    /// Nodal values of a function on the edge grid.
    pub fn p1_trace_from_fn(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut values: Vec<f64> = self.segments.iter().map(|s| f(s.xa)).collect();
        values.push(f(self.segments.last().unwrap().xb));
        values
    }

    /// L2 projection of an analytically given edge function onto the space.
    pub fn project_fn(&self, f: impl Fn(f64) -> f64) -> Result<DVector<f64>> {
        let rule = gauss_legendre_5();
        let mut rhs = DVector::zeros(self.dim);
        for seg in &self.segments {
            let h = seg.xb - seg.xa;
            for (q, w) in rule {
                let x = seg.xa + h * q;
                let fx = f(x);
                for m in 0..self.dim {
                    rhs[m] += w * h * fx * basis_value(m, x);
                }
            }
        }
        self.solve_mass(rhs)
    }

    /// L2 projection of a piecewise-linear edge trace onto the space.
    pub fn project_p1(&self, values: &[f64]) -> Result<DVector<f64>> {
        let rule = gauss_legendre_5();
        let mut rhs = DVector::zeros(self.dim);
        for (s, seg) in self.segments.iter().enumerate() {
            let h = seg.xb - seg.xa;
            for (q, w) in rule {
                let x = seg.xa + h * q;
                let fx = values[s] * (1.0 - q) + values[s + 1] * q;
                for m in 0..self.dim {
                    rhs[m] += w * h * fx * basis_value(m, x);
                }
            }
        }
        self.solve_mass(rhs)
    }

    fn solve_mass(&self, rhs: DVector<f64>) -> Result<DVector<f64>> {
        nalgebra::linalg::Cholesky::new(self.mass.clone())
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| Error::numerical("edge mass matrix is not SPD"))
    }

    /// ||u||_U of polynomial coefficients.
    pub fn poly_norm(&self, coeffs: &DVector<f64>) -> f64 {
        (coeffs.dot(&(&self.mass * coeffs))).max(0.0).sqrt()
    }

    /// L2 distance between a piecewise-linear trace and a polynomial.
    pub fn l2_error_p1_vs_poly(&self, values: &[f64], coeffs: &DVector<f64>) -> f64 {
        let rule = gauss_legendre_5();
        let mut acc = 0.0;
        for (s, seg) in self.segments.iter().enumerate() {
            let h = seg.xb - seg.xa;
            for (q, w) in rule {
                let x = seg.xa + h * q;
                let p1 = values[s] * (1.0 - q) + values[s + 1] * q;
                let d = p1 - self.eval(coeffs, x);
                acc += w * h * d * d;
            }
        }
        acc.sqrt()
    }

    /// Exact L2 inner product of two piecewise-linear edge traces.
    pub fn p1_l2_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (s, seg) in self.segments.iter().enumerate() {
            let h = seg.xb - seg.xa;
            acc += h / 6.0
                * (2.0 * u[s] * v[s] + u[s] * v[s + 1] + u[s + 1] * v[s] + 2.0 * u[s + 1] * v[s + 1]);
        }
        acc
    }

    /// Restriction of a bulk coefficient vector to the edge grid.
    pub fn restrict_to_edge(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut values = Vec::with_capacity(self.segments.len() + 1);
        values.push(coeffs[self.segments[0].dof_a]);
        for seg in &self.segments {
            values.push(coeffs[seg.dof_b]);
        }
        values
    }

    /// Edge-grid nodal values of a polynomial (for mixed arithmetic).
    pub fn poly_to_p1(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        let mut xs: Vec<f64> = self.segments.iter().map(|s| s.xa).collect();
        xs.push(self.segments.last().unwrap().xb);
        xs.into_iter().map(|x| self.eval(coeffs, x)).collect()
    }

    /// Number of edge grid nodes.
    pub fn n_edge_nodes(&self) -> usize {
        self.segments.len() + 1
    }
}

/// Orthonormalized shifted Legendre basis: ||phi_m||_{L2(0,1)} = 1.
pub fn basis_value(m: usize, x: f64) -> f64 {
    ((2 * m + 1) as f64).sqrt() * shifted_legendre(m, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::mesh::Mesh;
    use approx::assert_relative_eq;

    fn trace_space(nx: usize, degree: usize) -> (FESpace, BoundaryTraceSpace) {
        let space = FESpace::new(Mesh::build(nx, 4).unwrap()).unwrap();
        let trace = BoundaryTraceSpace::new(&space, degree).unwrap();
        (space, trace)
    }

    #[test]
    fn basis_is_orthonormal() {
        let (_, trace) = trace_space(8, 3);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(trace.mass[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn first_basis_functions_have_known_form() {
        assert_relative_eq!(basis_value(0, 0.3), 1.0, epsilon = 1e-14);
        assert_relative_eq!(basis_value(1, 0.75), 3.0f64.sqrt() * 0.5, epsilon = 1e-14);
        // P2(0) = -1/2 at x = 0.5.
        assert_relative_eq!(basis_value(2, 0.5), -0.5 * 5.0f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn projection_reproduces_polynomials_in_span() {
        let (_, trace) = trace_space(8, 3);
        let f = |x: f64| 2.0 * basis_value(0, x) - 0.5 * basis_value(2, x) + 0.1 * basis_value(3, x);
        let c = trace.project_fn(f).unwrap();
        assert_relative_eq!(c[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(c[2], -0.5, epsilon = 1e-12);
        assert_relative_eq!(c[3], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn couple_matrix_rows_vanish_off_the_edge() {
        let (space, trace) = trace_space(8, 3);
        let b0 = trace.couple_matrix(&space);
        let edge_dofs: std::collections::HashSet<usize> = trace
            .segments()
            .iter()
            .flat_map(|s| [s.dof_a, s.dof_b])
            .collect();
        for n in 0..space.n {
            let row_norm: f64 = (0..trace.dim).map(|m| b0[(n, m)].abs()).sum();
            if !edge_dofs.contains(&n) {
                assert_eq!(row_norm, 0.0);
            }
        }
        // Constant polynomial: total load equals edge length 1.
        let total: f64 = (0..space.n).map(|n| b0[(n, 0)]).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn p1_load_vector_matches_couple_matrix_for_linear_polys() {
        // A degree-1 polynomial is also a P1 edge trace; both assembly paths
        // must produce the same load vector.
        let (space, trace) = trace_space(8, 3);
        let b0 = trace.couple_matrix(&space);
        let coeffs = DVector::from_vec(vec![0.7, -0.2, 0.0, 0.0]);
        let values = trace.poly_to_p1(&coeffs);
        let via_p1 = trace.b_vector_from_p1(space.n, &values).unwrap();
        let via_poly = &b0 * &coeffs;
        for n in 0..space.n {
            assert_relative_eq!(via_p1[n], via_poly[n], epsilon = 1e-13);
        }
    }

    #[test]
    fn p1_inner_product_is_exact() {
        let (_, trace) = trace_space(8, 3);
        // u = x, v = 1 on the edge grid: integral x dx = 1/2.
        let u = trace.p1_trace_from_fn(|x| x);
        let v = trace.p1_trace_from_fn(|_| 1.0);
        assert_relative_eq!(trace.p1_l2_inner(&u, &v), 0.5, epsilon = 1e-13);
        // ||x||^2 = 1/3 exactly (x is in the P1 space).
        assert_relative_eq!(trace.p1_l2_inner(&u, &u), 1.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn best_fit_error_of_sine_decreases_with_degree() {
        let (_, trace4) = trace_space(64, 3);
        let f = |x: f64| 1.5 + 0.3 * (2.0 * std::f64::consts::PI * x).sin();
        let values = trace4.p1_trace_from_fn(f);
        let c3 = trace4.project_p1(&values).unwrap();
        let err3 = trace4.l2_error_p1_vs_poly(&values, &c3);
        // Degree-1 projection on the same trace must be worse.
        let (_, trace1) = trace_space(64, 1);
        let c1 = trace1.project_p1(&values).unwrap();
        let err1 = trace1.l2_error_p1_vs_poly(&values, &c1);
        assert!(err3 < err1);
        assert!(err3 > 0.0);
    }
}
