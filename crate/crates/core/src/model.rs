//! The parametrized forward model: a two-material diffusion problem on the
//! unit square whose right side carries a controllable inflow correction.
//! Everything the assimilation needs is affine in the parameter functions,
//! so operators are stored component-wise.

use crate::error::{Error, Result};
use crate::la::{gen_eigen_spd, BandCholesky, Csr, SymBand};
use crate::mesh_fem::{BoundaryTraceSpace, FESpace, Mesh};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Parameter coefficient of one affine component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum Theta {
    /// Constant 1.
    One,
    /// The i-th parameter component.
    Mu(usize),
}

impl Theta {
    pub fn value(&self, mu: &[f64]) -> f64 {
        match self {
            Theta::One => 1.0,
            Theta::Mu(i) => mu[*i],
        }
    }

    pub fn name(&self) -> String {
        match self {
            Theta::One => "1".to_string(),
            Theta::Mu(i) => format!("mu{}", i + 1),
        }
    }
}

/// Box of admissible parameters; grids and random draws are taken
/// logarithmically, matching how the estimation works.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("parameter bounds must have equal, nonzero length"));
        }
        for (l, h) in lo.iter().zip(hi.iter()) {
            if !(*l > 0.0 && h > l) {
                return Err(Error::invalid("parameter bounds must satisfy 0 < lo < hi"));
            }
        }
        Ok(ParameterDomain { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu.iter().zip(self.lo.iter().zip(self.hi.iter())).all(|(m, (l, h))| {
                let tol = 1e-12 * (h / l).ln().abs().max(1.0);
                *m >= l * (1.0 - tol) && *m <= h * (1.0 + tol)
            })
    }

    /// Tensor grid with n points per axis, log-spaced, row-major with the
    /// first axis slowest. Two-axis domains only (the model is two-parameter).
    pub fn log_grid(&self, n: usize) -> Vec<Vec<f64>> {
        assert_eq!(self.dim(), 2, "log_grid is defined for two-parameter domains");
        assert!(n >= 2);
        let axis = |k: usize| -> Vec<f64> {
            let (l, h) = (self.lo[k].log10(), self.hi[k].log10());
            (0..n).map(|i| 10f64.powf(l + (h - l) * i as f64 / (n - 1) as f64)).collect()
        };
        let a0 = axis(0);
        let a1 = axis(1);
        let mut grid = Vec::with_capacity(n * n);
        for &m0 in &a0 {
            for &m1 in &a1 {
                grid.push(vec![m0, m1]);
            }
        }
        grid
    }

    /// Points on the boundary of the log-box, walked counter-clockwise from
    /// the lower-left corner. Used to train the adjoint space where the
    /// parameter dependence is most extreme.
    pub fn boundary_log_grid(&self, n: usize) -> Vec<Vec<f64>> {
        assert_eq!(self.dim(), 2);
        assert!(n >= 4 && n % 4 == 0);
        let per_side = n / 4;
        let (l0, h0) = (self.lo[0].log10(), self.hi[0].log10());
        let (l1, h1) = (self.lo[1].log10(), self.hi[1].log10());
        let mut out = Vec::with_capacity(n);
        for i in 0..per_side {
            let t = i as f64 / per_side as f64;
            out.push(vec![10f64.powf(l0 + (h0 - l0) * t), 10f64.powf(l1)]);
        }
        for i in 0..per_side {
            let t = i as f64 / per_side as f64;
            out.push(vec![10f64.powf(h0), 10f64.powf(l1 + (h1 - l1) * t)]);
        }
        for i in 0..per_side {
            let t = i as f64 / per_side as f64;
            out.push(vec![10f64.powf(h0 - (h0 - l0) * t), 10f64.powf(h1)]);
        }
        for i in 0..per_side {
            let t = i as f64 / per_side as f64;
            out.push(vec![10f64.powf(l0), 10f64.powf(h1 - (h1 - l1) * t)]);
        }
        out
    }

    pub fn sample_log_uniform<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let (l, h) = (self.lo[k].log10(), self.hi[k].log10());
                10f64.powf(l + (h - l) * rng.random::<f64>())
            })
            .collect()
    }
}

/// Affine symmetric operator: sum of theta(mu) * component. Components share
/// a padded bandwidth so evaluation is a flat axpy.
pub struct AffineOperator {
    pub n: usize,
    pub components: Vec<(Theta, Csr)>,
    bands: Vec<SymBand>,
    pub hbw: usize,
}

impl AffineOperator {
    pub fn new(components: Vec<(Theta, Csr)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("affine operator needs at least one component"));
        }
        let n = components[0].1.nrows;
        let mut hbw = 0;
        for (_, c) in &components {
            if c.nrows != n || c.ncols != n {
                return Err(Error::Dimension("affine components must share a square shape".into()));
            }
            hbw = hbw.max(c.half_bandwidth());
        }
        let bands = components
            .iter()
            .map(|(_, c)| Ok(SymBand::from_csr(c)?.pad_to_bandwidth(hbw)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AffineOperator { n, components, bands, hbw })
    }

    pub fn evaluate_band(&self, mu: &[f64]) -> SymBand {
        let mut out = SymBand::zeros(self.n, self.hbw);
        for ((theta, _), band) in self.components.iter().zip(self.bands.iter()) {
            out.axpy(theta.value(mu), band);
        }
        out
    }

    pub fn evaluate_csr(&self, mu: &[f64]) -> Csr {
        let mut it = self.components.iter();
        let (theta0, c0) = it.next().unwrap();
        let mut acc = c0.clone();
        for v in acc.data.iter_mut() {
            *v *= theta0.value(mu);
        }
        for (theta, c) in it {
            acc = acc.add_scaled(c, theta.value(mu));
        }
        acc
    }

    pub fn factor(&self, mu: &[f64]) -> Result<BandCholesky> {
        self.evaluate_band(mu).cholesky()
    }

    /// y^T A(mu) x without assembling A(mu).
    pub fn bilinear(&self, mu: &[f64], y: &[f64], x: &[f64]) -> f64 {
        self.components
            .iter()
            .map(|(theta, c)| theta.value(mu) * c.bilinear(y, x))
            .sum()
    }
}

/// How the manufactured correction is specified.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UTrueSpec {
    /// offset + amplitude * sin(2 pi x): not a polynomial, so the correction
    /// space can only approximate it.
    SinePlusConstant { offset: f64, amplitude: f64 },
    /// Coefficients in the orthonormal edge basis (lies in the space).
    Polynomial { coeffs: Vec<f64> },
}

impl UTrueSpec {
    pub fn eval(&self, trace: &BoundaryTraceSpace, x: f64) -> f64 {
        match self {
            UTrueSpec::SinePlusConstant { offset, amplitude } => {
                offset + amplitude * (2.0 * std::f64::consts::PI * x).sin()
            }
            UTrueSpec::Polynomial { coeffs } => {
                trace.eval(&DVector::from_vec(coeffs.clone()), x)
            }
        }
    }
}

/// A correction fed into the forward solve.
pub enum CorrectionSource<'a> {
    /// Coefficients in the edge polynomial basis.
    Poly(&'a DVector<f64>),
    /// Piecewise-linear nodal values on the edge grid.
    EdgeP1(&'a [f64]),
}

pub struct ThermalBlockModel {
    pub space: FESpace,
    pub trace: BoundaryTraceSpace,
    pub domain: ParameterDomain,
    /// Stiffness components: unit coefficient on material 0, mu1 on the inner
    /// block, mu2 on the remaining upper half.
    pub a_op: AffineOperator,
    /// Edge-to-bulk coupling in the orthonormal edge basis.
    pub b0: DMatrix<f64>,
    /// Background correction (the constant 1) in edge coordinates.
    pub u_start: DVector<f64>,
    /// Background load b(u_start, .).
    pub f_bk: DVector<f64>,
    pub mu_true: Vec<f64>,
    pub u_true: UTrueSpec,
    pub u_true_values: Vec<f64>,
    /// Continuity constant of the coupling, sup b(u,y)/(|u| |y|); exact and
    /// parameter-independent for this model.
    pub gamma_b: f64,
}

impl ThermalBlockModel {
    pub fn build(
        nx: usize,
        ny: usize,
        degree: usize,
        mu_true: Vec<f64>,
        u_true: UTrueSpec,
    ) -> Result<Self> {
        let domain = ParameterDomain::new(vec![0.1, 0.1], vec![10.0, 10.0])?;
        if !domain.contains(&mu_true) {
            return Err(Error::invalid(format!("mu_true {mu_true:?} outside the parameter box")));
        }
        let space = FESpace::new(Mesh::build(nx, ny)?)?;
        let trace = BoundaryTraceSpace::new(&space, degree)?;
        let k0 = space.assemble_stiffness(Some(0));
        let k1 = space.assemble_stiffness(Some(1));
        let k2 = space.assemble_stiffness(Some(2));
        let a_op = AffineOperator::new(vec![
            (Theta::One, k0),
            (Theta::Mu(0), k1),
            (Theta::Mu(1), k2),
        ])?;
        let b0 = trace.couple_matrix(&space);
        let u_start = trace.project_fn(|_| 1.0)?;
        let f_bk = &b0 * &u_start;
        let u_true_values = trace.p1_trace_from_fn(|x| u_true.eval(&trace, x));
        let gamma_b = coupling_continuity(&space, &trace, &b0)?;
        Ok(ThermalBlockModel {
            space,
            trace,
            domain,
            a_op,
            b0,
            u_start,
            f_bk,
            mu_true,
            u_true,
            u_true_values,
            gamma_b,
        })
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn m_u(&self) -> usize {
        self.trace.dim
    }

    /// min theta over the active components; a coercivity lower bound since
    /// every component is positive semidefinite.
    pub fn coercivity_lower_bound(&self, mu: &[f64]) -> Result<f64> {
        if !self.domain.contains(mu) {
            return Err(Error::invalid(format!("mu {mu:?} outside the parameter box")));
        }
        Ok(self
            .a_op
            .components
            .iter()
            .map(|(theta, _)| theta.value(mu))
            .fold(f64::INFINITY, f64::min))
    }

    pub fn continuity_upper_bound(&self, mu: &[f64]) -> f64 {
        self.a_op
            .components
            .iter()
            .map(|(theta, _)| theta.value(mu))
            .fold(0.0, f64::max)
    }

    /// b(u, y) for edge coefficients u and bulk coefficients y.
    pub fn b_apply(&self, u: &DVector<f64>, y: &[f64]) -> f64 {
        let bu = &self.b0 * u;
        bu.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn factor(&self, mu: &[f64]) -> Result<BandCholesky> {
        if !self.domain.contains(mu) {
            return Err(Error::invalid(format!("mu {mu:?} outside the parameter box")));
        }
        self.a_op.factor(mu)
    }

    /// Forward responses to each edge basis function: columns solve
    /// a(y, .; mu) = b(phi_m, .).
    pub fn responses(&self, chol: &BandCholesky) -> DMatrix<f64> {
        let mut resp = DMatrix::zeros(self.n(), self.m_u());
        for m in 0..self.m_u() {
            let col: Vec<f64> = self.b0.column(m).iter().copied().collect();
            let sol = chol.solve(&col);
            resp.set_column(m, &DVector::from_vec(sol));
        }
        resp
    }

    pub fn background_state(&self, chol: &BandCholesky) -> DVector<f64> {
        let f: Vec<f64> = self.f_bk.iter().copied().collect();
        DVector::from_vec(chol.solve(&f))
    }

    /// FE solution of a(y, .; mu) = b(u, .) with no background load; this is
    /// how synthetic truth states are manufactured.
    pub fn manufacture_truth(&self, mu: &[f64], source: CorrectionSource<'_>) -> Result<Vec<f64>> {
        let rhs = match source {
            CorrectionSource::Poly(c) => {
                if c.len() != self.m_u() {
                    return Err(Error::Dimension("correction coefficients have wrong length".into()));
                }
                &self.b0 * c
            }
            CorrectionSource::EdgeP1(values) => self.trace.b_vector_from_p1(self.n(), values)?,
        };
        let chol = self.factor(mu)?;
        Ok(chol.solve(rhs.as_slice()))
    }

    /// Serializable description of the affine structure.
    pub fn theta_names(&self) -> Vec<String> {
        self.a_op.components.iter().map(|(t, _)| t.name()).collect()
    }
}

/// Largest singular value of the coupling once both sides are measured in
/// their own norms: gamma_b = sigma_max(L^{-1} B0 R^{-T}) with K = L L^T the
/// bulk Gram and M_U = R R^T the edge Gram.
fn coupling_continuity(
    space: &FESpace,
    trace: &BoundaryTraceSpace,
    b0: &DMatrix<f64>,
) -> Result<f64> {
    let m = trace.dim;
    let mut z = DMatrix::zeros(space.n, m);
    for c in 0..m {
        let col: Vec<f64> = b0.column(c).iter().copied().collect();
        let w = space.gram_cholesky().forward_solve(&col);
        z.set_column(c, &DVector::from_vec(w));
    }
    let ztz = z.transpose() * &z;
    let (vals, _) = gen_eigen_spd(&ztz, &trace.mass)?;
    Ok(vals.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}
