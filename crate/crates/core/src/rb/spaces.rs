//! Reduced operator blocks and the Riesz-lift coordinate data that lets
//! residual dual norms be evaluated online without touching the fine mesh.

use crate::assimilate::MeasurementSpace;
use crate::error::{Error, Result};
use crate::io;
use crate::la::mgs_orthonormalize;
use crate::model::{ParameterDomain, Theta, ThermalBlockModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Provenance of one basis column, kept for diagnostics and manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotTag {
    /// "state" for background/response snapshots, "adjoint" for representer
    /// responses.
    pub source: String,
    pub mu: Vec<f64>,
    /// Index into the right-hand-side family that produced the snapshot.
    pub rhs: usize,
}

/// Y-orthonormal coordinates of the Riesz-lifted residual ingredients.
///
/// Each residual is a fixed linear combination of family members (f, the
/// coupling columns, the representers, the A_q images of the basis), so its
/// dual norm is the Euclidean norm of `C * px` where `px` holds the
/// combination coefficients. Evaluating the norm through coordinates keeps
/// the cancellation between nearby family members at the eps * scale level,
/// orders below what the equivalent cached quadratic form can resolve.
#[derive(Debug, Clone)]
pub struct ResidualData {
    /// State-residual family [f | B0 e_m | A_q z_j], rank x (1 + M + Q n_r).
    pub c_state: DMatrix<f64>,
    /// Adjoint-residual family [tau_hat_l | A_q z_j], rank x (L + Q n_r).
    pub c_adjoint: DMatrix<f64>,
}

/// Everything the online phase needs: reduced operators, observation maps,
/// continuity data and residual Gram blocks. Independent of mu and lambda.
#[derive(Clone)]
pub struct RbSpaces {
    /// Y-orthonormal state basis, one column per reduced vector.
    pub z: DMatrix<f64>,
    /// U-orthonormal correction basis in edge coordinates, M x M_R.
    pub u_r: DMatrix<f64>,
    pub tags: Vec<SnapshotTag>,
    pub thetas: Vec<Theta>,
    /// Z^T A_q Z, one per affine term.
    pub a_r: Vec<DMatrix<f64>>,
    /// Z^T B0 over the full correction space, n_r x M.
    pub b_r: DMatrix<f64>,
    /// Z^T B0 U_R, n_r x M_R.
    pub b_r_red: DMatrix<f64>,
    /// Z^T f, length n_r.
    pub f_r: DVector<f64>,
    /// khat^T Z: observed coordinates of reduced states, L x n_r.
    pub q_obs: DMatrix<f64>,
    /// Raw measurements to orthonormal data coordinates, L x L.
    pub hat_from_meas: DMatrix<f64>,
    /// Full correction-space Gram, M x M.
    pub m_u: DMatrix<f64>,
    /// Reduced correction Gram U_R^T M_U U_R, identity by construction.
    pub m_u_r: DMatrix<f64>,
    pub domain: ParameterDomain,
    /// Upper bound for the coupling form norm.
    pub gamma_b: f64,
    pub residual: ResidualData,
}

impl RbSpaces {
    pub fn n_r(&self) -> usize {
        self.z.ncols()
    }

    pub fn l(&self) -> usize {
        self.q_obs.nrows()
    }

    /// Dimension of the reduced correction space.
    pub fn m_r(&self) -> usize {
        self.u_r.ncols()
    }

    /// Assemble all reduced blocks from a Y-orthonormal state basis and a
    /// U-orthonormal correction basis. Cost is dominated by one stiffness
    /// solve per (affine term, basis vector).
    pub fn build(
        model: &ThermalBlockModel,
        ms: &MeasurementSpace,
        z: DMatrix<f64>,
        tags: Vec<SnapshotTag>,
        u_r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = model.n();
        let n_r = z.ncols();
        if z.nrows() != n {
            return Err(Error::Dimension(format!(
                "basis has {} rows, space has {n} dofs",
                z.nrows()
            )));
        }
        if n_r == 0 {
            return Err(Error::invalid("reduced basis is empty"));
        }
        if tags.len() != n_r {
            return Err(Error::invalid("one snapshot tag per basis column required"));
        }
        if u_r.nrows() != model.m_u() || u_r.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "correction basis must be {} x m_r with m_r >= 1",
                model.m_u()
            )));
        }
        let m_u_r = u_r.transpose() * &model.trace.mass * &u_r;
        if (&m_u_r - DMatrix::identity(u_r.ncols(), u_r.ncols())).amax() > 1e-8 {
            return Err(Error::invalid("correction basis must be U-orthonormal"));
        }
        let thetas: Vec<Theta> = model.a_op.components.iter().map(|(t, _)| *t).collect();
        let n_q = thetas.len();

        // Reduced operators.
        let mut a_r = Vec::with_capacity(n_q);
        let mut az_all = Vec::with_capacity(n_q);
        for (_, a_q) in &model.a_op.components {
            let mut az = DMatrix::zeros(n, n_r);
            for j in 0..n_r {
                let col = a_q.matvec_alloc(z.column(j).as_slice());
                az.column_mut(j).copy_from_slice(&col);
            }
            a_r.push(z.transpose() * &az);
            az_all.push(az);
        }
        let b_r = z.transpose() * &model.b0;
        let b_r_red = &b_r * &u_r;
        let f_r = z.transpose() * &model.f_bk;
        let q_obs = ms.khat.transpose() * &z;

        // Riesz lifts of every residual ingredient, orthonormalized jointly
        // so both residual families share one coordinate system. The
        // representers are lifts of the khat columns and enter as they are.
        let m = model.m_u();
        let l = ms.l;
        let mut fam: Vec<DVector<f64>> = Vec::with_capacity(1 + m + l + n_q * n_r);
        fam.push(DVector::from_vec(model.space.riesz(model.f_bk.as_slice())));
        for j in 0..m {
            fam.push(DVector::from_vec(model.space.riesz(model.b0.column(j).as_slice())));
        }
        for k in 0..l {
            fam.push(ms.tau_hat.column(k).into_owned());
        }
        for az in &az_all {
            for j in 0..n_r {
                fam.push(DVector::from_vec(model.space.riesz(az.column(j).as_slice())));
            }
        }
        let ip = |a: &DVector<f64>, b: &DVector<f64>| {
            model.space.y_inner(a.as_slice(), b.as_slice())
        };
        let (qs, _) = mgs_orthonormalize(&fam, ip, 1e-14);
        drop(fam);

        // Coordinates <q_i, K^{-1} g>_Y = q_i . g against the raw ingredients.
        let rank = qs.len();
        let d_state = 1 + m + n_q * n_r;
        let d_adjoint = l + n_q * n_r;
        let mut c_state = DMatrix::zeros(rank, d_state);
        let mut c_adjoint = DMatrix::zeros(rank, d_adjoint);
        for (i, q) in qs.iter().enumerate() {
            c_state[(i, 0)] = q.dot(&model.f_bk);
            for j in 0..m {
                c_state[(i, 1 + j)] = q.dot(&model.b0.column(j));
            }
            for k in 0..l {
                c_adjoint[(i, k)] = q.dot(&ms.khat.column(k));
            }
            for (qq, az) in az_all.iter().enumerate() {
                for j in 0..n_r {
                    let v = q.dot(&az.column(j));
                    c_state[(i, 1 + m + qq * n_r + j)] = v;
                    c_adjoint[(i, l + qq * n_r + j)] = v;
                }
            }
        }

        Ok(RbSpaces {
            z,
            u_r,
            tags,
            thetas,
            a_r,
            b_r,
            b_r_red,
            f_r,
            q_obs,
            hat_from_meas: ms.data_transform().clone(),
            m_u: model.trace.mass.clone(),
            m_u_r,
            domain: model.domain.clone(),
            gamma_b: model.gamma_b,
            residual: ResidualData { c_state, c_adjoint },
        })
    }

    /// Reduced stiffness at mu, assembled from the affine blocks.
    pub fn a_r_at(&self, mu: &[f64]) -> DMatrix<f64> {
        let n_r = self.n_r();
        let mut a = DMatrix::zeros(n_r, n_r);
        for (theta, block) in self.thetas.iter().zip(&self.a_r) {
            a += block * theta.value(mu);
        }
        a
    }

    pub fn theta_values(&self, mu: &[f64]) -> Vec<f64> {
        self.thetas.iter().map(|t| t.value(mu)).collect()
    }

    /// Persist the bases and manifest; reduced blocks are rebuilt on load.
    pub fn save_basis(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_bin_matrix(&dir.join("state_basis.bin"), &self.z)?;
        io::write_matrix_market_array(&dir.join("correction_basis.mtx"), &self.u_r)?;
        let manifest = serde_json::json!({
            "schema": "rb3dvar.rb-spaces.v1",
            "n": self.z.nrows(),
            "n_r": self.n_r(),
            "m_r": self.m_r(),
            "l": self.l(),
            "tags": self.tags,
        });
        io::atomic_write(
            &dir.join("rb_manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    /// Rebuild reduced data for a stored basis against a freshly assembled
    /// model and measurement space.
    pub fn load_basis(
        model: &ThermalBlockModel,
        ms: &MeasurementSpace,
        dir: &Path,
    ) -> Result<Self> {
        let z = io::read_bin_matrix(&dir.join("state_basis.bin"))?;
        let u_r = io::read_matrix_market_array(&dir.join("correction_basis.mtx"))?;
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("rb_manifest.json"))?)?;
        let tags: Vec<SnapshotTag> = serde_json::from_value(manifest["tags"].clone())?;
        RbSpaces::build(model, ms, z, tags, u_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assimilate::MeasurementSpace;
    use crate::mesh_fem::functionals::sensor_grid;
    use crate::model::{ThermalBlockModel, UTrueSpec};

    fn small_model() -> ThermalBlockModel {
        ThermalBlockModel::build(
            8,
            8,
            3,
            vec![7.0, 0.3],
            UTrueSpec::SinePlusConstant {
                offset: 0.4,
                amplitude: 1.0,
            },
        )
        .unwrap()
    }

    fn full_u(model: &ThermalBlockModel) -> DMatrix<f64> {
        DMatrix::identity(model.m_u(), model.m_u())
    }

    fn basis_from_snapshots(model: &ThermalBlockModel, mus: &[[f64; 2]]) -> DMatrix<f64> {
        let mut cols = Vec::new();
        for mu in mus {
            let chol = model.factor(mu).unwrap();
            cols.push(model.background_state(&chol));
            let resp = model.responses(&chol);
            cols.push(resp.column(0).into_owned());
        }
        let (ortho, _) = crate::la::dense::mgs_orthonormalize(
            &cols,
            |a, b| model.space.y_inner(a.as_slice(), b.as_slice()),
            1e-12,
        );
        let mut z = DMatrix::zeros(model.n(), ortho.len());
        for (j, v) in ortho.iter().enumerate() {
            z.column_mut(j).copy_from(v);
        }
        z
    }

    #[test]
    fn reduced_blocks_match_direct_projection() {
        let model = small_model();
        let ms = MeasurementSpace::build(&model.space, sensor_grid(3, 0.2, 0.8, 0.05)).unwrap();
        let z = basis_from_snapshots(&model, &[[1.0, 1.0], [9.0, 0.2]]);
        let n_r = z.ncols();
        let tags = vec![
            SnapshotTag { source: "state".into(), mu: vec![1.0, 1.0], rhs: 0 };
            n_r
        ];
        let rb = RbSpaces::build(&model, &ms, z.clone(), tags, full_u(&model)).unwrap();

        // Z is Y-orthonormal, so Z^T K Z = I.
        let mut ktz = DMatrix::zeros(model.n(), n_r);
        for j in 0..n_r {
            let col = model.space.gram.matvec_alloc(z.column(j).as_slice());
            ktz.column_mut(j).copy_from_slice(&col);
        }
        let id = z.transpose() * &ktz;
        assert!((id - DMatrix::identity(n_r, n_r)).amax() < 1e-10);

        let mu = [5.0, 0.7];
        let a_csr = model.a_op.evaluate_csr(&mu);
        let mut az = DMatrix::zeros(model.n(), n_r);
        for j in 0..n_r {
            let col = a_csr.matvec_alloc(z.column(j).as_slice());
            az.column_mut(j).copy_from_slice(&col);
        }
        let direct = z.transpose() * az;
        assert!((rb.a_r_at(&mu) - direct).amax() < 1e-12);
        assert!((&rb.b_r - z.transpose() * &model.b0).amax() < 1e-14);
    }

    #[test]
    fn residual_coordinates_reproduce_fine_space_inner_products() {
        let model = small_model();
        let ms = MeasurementSpace::build(&model.space, sensor_grid(3, 0.2, 0.8, 0.05)).unwrap();
        let z = basis_from_snapshots(&model, &[[2.0, 0.5]]);
        let n_r = z.ncols();
        let tags = vec![
            SnapshotTag { source: "state".into(), mu: vec![2.0, 0.5], rhs: 0 };
            n_r
        ];
        let rb = RbSpaces::build(&model, &ms, z.clone(), tags, full_u(&model)).unwrap();
        let cs = &rb.residual.c_state;
        let ca = &rb.residual.c_adjoint;
        let m = model.m_u();
        let l = ms.l;

        let lift = |v: &[f64]| DVector::from_vec(model.space.riesz(v));
        let yip = |a: &DVector<f64>, b: &DVector<f64>| {
            model.space.y_inner(a.as_slice(), b.as_slice())
        };
        let pair = |c: &DMatrix<f64>, i: usize, j: usize| c.column(i).dot(&c.column(j));

        // C^T C reproduces the Y-Gram of the Riesz-lifted family.
        let f_lift = lift(model.f_bk.as_slice());
        let g_ff = yip(&f_lift, &f_lift);
        assert!((pair(cs, 0, 0) - g_ff).abs() < 1e-12 * g_ff.max(1.0));

        let b_lift = lift(model.b0.column(1).as_slice());
        assert!((pair(cs, 0, 1 + 1) - yip(&f_lift, &b_lift)).abs() < 1e-11);
        assert!((pair(cs, 1 + 1, 1 + 1) - yip(&b_lift, &b_lift)).abs() < 1e-11);

        let q = 1;
        let j = n_r - 1;
        let a_q = &model.a_op.components[q].1;
        let az = DVector::from_vec(a_q.matvec_alloc(z.column(j).as_slice()));
        let a_lift = lift(az.as_slice());
        let acol_s = 1 + m + q * n_r + j;
        let acol_a = l + q * n_r + j;
        assert!((pair(cs, 0, acol_s) - yip(&f_lift, &a_lift)).abs() < 1e-11);
        assert!((pair(cs, acol_s, acol_s) - yip(&a_lift, &a_lift)).abs() < 1e-11);

        // Representer columns are orthonormal, and the shared A-columns give
        // the same coordinates in both families.
        for k in 0..l {
            for kp in 0..l {
                let want = if k == kp { 1.0 } else { 0.0 };
                assert!((pair(ca, k, kp) - want).abs() < 1e-10);
            }
        }
        let tau0 = ms.tau_hat.column(0).into_owned();
        assert!((pair(ca, 0, acol_a) - yip(&tau0, &a_lift)).abs() < 1e-11);
        assert!((ca.column(acol_a) - cs.column(acol_s)).amax() < 1e-14);
    }

    #[test]
    fn basis_round_trips_through_disk() {
        let model = small_model();
        let ms = MeasurementSpace::build(&model.space, sensor_grid(3, 0.2, 0.8, 0.05)).unwrap();
        let z = basis_from_snapshots(&model, &[[2.0, 0.5], [10.0, 2.0]]);
        let n_r = z.ncols();
        let tags: Vec<SnapshotTag> = (0..n_r)
            .map(|j| SnapshotTag { source: "state".into(), mu: vec![2.0, 0.5], rhs: j })
            .collect();
        let rb = RbSpaces::build(&model, &ms, z, tags, full_u(&model)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        rb.save_basis(dir.path()).unwrap();
        let back = RbSpaces::load_basis(&model, &ms, dir.path()).unwrap();
        assert_eq!(back.z, rb.z);
        assert_eq!(back.tags.len(), rb.tags.len());
        assert_eq!(back.tags[1].rhs, 1);
        assert!((back.a_r_at(&[3.0, 3.0]) - rb.a_r_at(&[3.0, 3.0])).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let model = small_model();
        let ms = MeasurementSpace::build(&model.space, sensor_grid(3, 0.2, 0.8, 0.05)).unwrap();
        let bad = DMatrix::zeros(model.n() + 1, 2);
        assert!(RbSpaces::build(&model, &ms, bad, vec![], full_u(&model)).is_err());
        let empty = DMatrix::zeros(model.n(), 0);
        assert!(RbSpaces::build(&model, &ms, empty, vec![], full_u(&model)).is_err());
    }
}
