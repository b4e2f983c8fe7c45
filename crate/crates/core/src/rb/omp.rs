//! Greedy orthogonal matching pursuit over a functional library.
//!
//! The measurement space T is grown one representer at a time: find the
//! parameter (or parameter pair) whose reduced corrected-state span is worst
//! observed, take the least-observed unit state in that span, and add the
//! library functional that sees most of its unobserved part. The first phase
//! drives the observability constant kappa over a training grid past the
//! target; the optional second phase continues with the pairwise
//! distinguishability constant used for parameter estimation.

use crate::error::{Error, Result};
use crate::la::dense::sym_eigen_sorted;
use crate::la::smallest_singular_value_inf;
use crate::mesh_fem::functionals::GaussianSensor;
use crate::mesh_fem::space::FESpace;
use crate::model::ThermalBlockModel;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::collections::HashSet;

/// Candidate observation functionals with precomputed dual norms. Gaussian
/// coefficient vectors are sparse, so entries are stored compressed.
pub struct FunctionalLibrary {
    entries: Vec<(Vec<usize>, Vec<f64>)>,
    pub dual_norms: Vec<f64>,
    /// Sensor metadata when the library came from Gaussian centers.
    pub sensors: Option<Vec<GaussianSensor>>,
    n: usize,
}

impl FunctionalLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn from_dense(
        space: &FESpace,
        dense: Vec<Vec<f64>>,
        sensors: Option<Vec<GaussianSensor>>,
    ) -> Result<Self> {
        if dense.is_empty() {
            return Err(Error::invalid("functional library is empty"));
        }
        let dual_norms: Vec<f64> = dense
            .par_iter()
            .map(|g| {
                let lift = space.riesz(g);
                g.iter().zip(&lift).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
            })
            .collect();
        if let Some(i) = dual_norms.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::invalid(format!("library functional {i} is zero")));
        }
        let entries = dense
            .into_iter()
            .map(|g| {
                let mut idx = Vec::new();
                let mut val = Vec::new();
                for (i, &v) in g.iter().enumerate() {
                    if v != 0.0 {
                        idx.push(i);
                        val.push(v);
                    }
                }
                (idx, val)
            })
            .collect();
        Ok(FunctionalLibrary {
            entries,
            dual_norms,
            sensors,
            n: space.n,
        })
    }

    /// Library of Gaussian sensor functionals on a grid of centers.
    pub fn from_sensors(space: &FESpace, sensors: Vec<GaussianSensor>) -> Result<Self> {
        let dense: Vec<Vec<f64>> =
            sensors.par_iter().map(|s| s.assemble(space)).collect();
        FunctionalLibrary::from_dense(space, dense, Some(sensors))
    }

    /// Library from explicit functional coefficient vectors.
    pub fn from_vectors(space: &FESpace, vecs: Vec<DVector<f64>>) -> Result<Self> {
        let dense = vecs
            .into_iter()
            .map(|v| v.iter().copied().collect())
            .collect();
        FunctionalLibrary::from_dense(space, dense, None)
    }

    /// Apply functional `i` to a dense coefficient vector.
    pub fn value(&self, i: usize, v: &DVector<f64>) -> f64 {
        let (idx, val) = &self.entries[i];
        idx.iter().zip(val).map(|(&r, &c)| c * v[r]).sum()
    }

    /// Dense coefficient vector of functional `i`.
    pub fn coefficient_vector(&self, i: usize) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        let (idx, val) = &self.entries[i];
        for (&r, &c) in idx.iter().zip(val) {
            g[r] = c;
        }
        g
    }
}

/// Knobs of the selection loop.
#[derive(Debug, Clone)]
pub struct OmpConfig {
    /// Target for the selection criterion.
    pub beta0: f64,
    /// Maximum number of functionals.
    pub l_max: usize,
    /// Start parameter for the first iteration.
    pub mu1: Vec<f64>,
    /// Continue past the kappa target with the pairwise criterion.
    pub pair_mode: bool,
}

/// One iteration of the trace: criterion values after the expansion.
#[derive(Debug, Clone)]
pub struct OmpStep {
    pub iteration: usize,
    pub library_index: usize,
    pub center: Option<[f64; 2]>,
    pub kappa_min: f64,
    /// NaN while the pair phase has not started.
    pub beta_pair_min: f64,
}

#[derive(Debug, Clone)]
pub struct OmpOutcome {
    pub selected: Vec<usize>,
    pub sensors: Option<Vec<GaussianSensor>>,
    pub steps: Vec<OmpStep>,
    pub reached_beta0: bool,
    pub hit_l_max: bool,
    pub library_exhausted: bool,
    /// Functionals rejected as linearly dependent during selection.
    pub dependent_skipped: usize,
}

/// Euclidean MGS with drop tolerance; inputs and outputs are reduced-space
/// coordinate columns (the fine basis is Y-orthonormal, so this is Y-MGS).
fn mgs_cols(cols: &[DVector<f64>], drop_tol: f64) -> DMatrix<f64> {
    let n = cols.first().map(|c| c.len()).unwrap_or(0);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for c in cols {
        let scale = c.norm();
        if scale <= 0.0 {
            continue;
        }
        let mut v = c.clone();
        for _ in 0..2 {
            for k in &kept {
                let d = v.dot(k);
                v -= k * d;
            }
        }
        let norm = v.norm();
        if norm > drop_tol * scale {
            kept.push(v / norm);
        }
    }
    let mut s = DMatrix::zeros(n, kept.len());
    for (j, v) in kept.iter().enumerate() {
        s.column_mut(j).copy_from(v);
    }
    s
}

/// Observed-coordinate matrix of a reduced-coordinate span.
fn observe(q_rows: &[DVector<f64>], s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(q_rows.len(), s.ncols());
    for (l, row) in q_rows.iter().enumerate() {
        for c in 0..s.ncols() {
            m[(l, c)] = row.dot(&s.column(c).into_owned());
        }
    }
    m
}

/// Smallest observed fraction over a span given in orthonormal reduced
/// coordinates; this is both kappa (response spans) and beta (pair spans).
fn min_observed(q_rows: &[DVector<f64>], s: &DMatrix<f64>) -> f64 {
    if s.ncols() == 0 {
        return 0.0;
    }
    if q_rows.is_empty() {
        return 0.0;
    }
    smallest_singular_value_inf(&observe(q_rows, s)).clamp(0.0, 1.0)
}

/// Unit direction in the span least seen by T, in reduced coordinates.
fn least_observed_direction(q_rows: &[DVector<f64>], s: &DMatrix<f64>) -> DVector<f64> {
    if q_rows.is_empty() {
        return s.column(0).into_owned();
    }
    let m = observe(q_rows, s);
    let (_, vecs) = sym_eigen_sorted(&(m.transpose() * m));
    s * vecs.column(0).into_owned()
}

struct ReducedModel {
    a_r: Vec<DMatrix<f64>>,
    thetas: Vec<crate::model::Theta>,
    b_r_red: DMatrix<f64>,
    f_r: DVector<f64>,
}

impl ReducedModel {
    fn build(model: &ThermalBlockModel, z: &DMatrix<f64>, u_r: &DMatrix<f64>) -> Self {
        let n = model.n();
        let n_r = z.ncols();
        let mut a_r = Vec::new();
        for (_, a_q) in &model.a_op.components {
            let mut az = DMatrix::zeros(n, n_r);
            for j in 0..n_r {
                let col = a_q.matvec_alloc(z.column(j).as_slice());
                az.column_mut(j).copy_from_slice(&col);
            }
            a_r.push(z.transpose() * az);
        }
        ReducedModel {
            a_r,
            thetas: model.a_op.components.iter().map(|(t, _)| *t).collect(),
            b_r_red: z.transpose() * &model.b0 * u_r,
            f_r: z.transpose() * &model.f_bk,
        }
    }

    /// Reduced responses and background at mu.
    fn solve(&self, mu: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n_r = self.f_r.len();
        let mut a = DMatrix::zeros(n_r, n_r);
        for (t, block) in self.thetas.iter().zip(&self.a_r) {
            a += block * t.value(mu);
        }
        let chol = nalgebra::linalg::Cholesky::new(a)
            .ok_or_else(|| Error::numerical("reduced stiffness is not SPD"))?;
        Ok((chol.solve(&self.b_r_red), chol.solve(&self.f_r)))
    }
}

/// Run the selection. `z` is the Y-orthonormal reduced state basis the
/// criteria are evaluated in, `u_r` the correction basis, `xi_train` the
/// kappa training grid and `pair_train` the grid whose unordered parameter
/// pairs drive the second phase.
pub fn select_functionals(
    model: &ThermalBlockModel,
    z: &DMatrix<f64>,
    u_r: &DMatrix<f64>,
    library: &FunctionalLibrary,
    xi_train: &[Vec<f64>],
    pair_train: &[Vec<f64>],
    cfg: &OmpConfig,
) -> Result<OmpOutcome> {
    if library.is_empty() {
        return Err(Error::invalid("functional library is empty"));
    }
    if library.n != model.n() {
        return Err(Error::Dimension(
            "library was assembled on a different space".into(),
        ));
    }
    if xi_train.is_empty() {
        return Err(Error::invalid("selection needs a nonempty training grid"));
    }
    if !(cfg.beta0 > 0.0) {
        return Err(Error::invalid("selection target beta0 must be positive"));
    }
    if cfg.pair_mode && pair_train.is_empty() {
        return Err(Error::invalid("pair mode needs a pair-training grid"));
    }
    let n_r = z.ncols();
    let red = ReducedModel::build(model, z, u_r);

    // Orthonormal response spans per training parameter (T-independent).
    let spans: Vec<DMatrix<f64>> = xi_train
        .par_iter()
        .map(|mu| {
            let (resp, _) = red.solve(mu)?;
            let cols: Vec<DVector<f64>> =
                (0..resp.ncols()).map(|j| resp.column(j).into_owned()).collect();
            Ok(mgs_cols(&cols, 1e-10))
        })
        .collect::<Result<_>>()?;
    let span_mu1 = {
        let (resp, _) = red.solve(&cfg.mu1)?;
        let cols: Vec<DVector<f64>> =
            (0..resp.ncols()).map(|j| resp.column(j).into_owned()).collect();
        mgs_cols(&cols, 1e-10)
    };
    // Pair spans add the background direction (T-independent).
    let pair_spans: Vec<DMatrix<f64>> = pair_train
        .par_iter()
        .map(|mu| {
            let (resp, y_bk) = red.solve(mu)?;
            let mut cols = vec![y_bk];
            for j in 0..resp.ncols() {
                cols.push(resp.column(j).into_owned());
            }
            Ok(mgs_cols(&cols, 1e-10))
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..pair_train.len())
        .flat_map(|i| ((i + 1)..pair_train.len()).map(move |j| (i, j)))
        .collect();

    // Library values on the reduced basis, one row per functional.
    let tab_z = {
        let mut t = DMatrix::zeros(library.len(), n_r);
        let rows: Vec<Vec<f64>> = (0..library.len())
            .into_par_iter()
            .map(|i| {
                (0..n_r)
                    .map(|j| library.value(i, &z.column(j).into_owned()))
                    .collect()
            })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                t[(i, j)] = v;
            }
        }
        t
    };
    // Stiffness images K z_j let representer rows come from plain dots.
    let kz = {
        let mut m = DMatrix::zeros(model.n(), n_r);
        for j in 0..n_r {
            let col = model.space.gram.matvec_alloc(z.column(j).as_slice());
            m.column_mut(j).copy_from_slice(&col);
        }
        m
    };

    let mut tau_cols: Vec<DVector<f64>> = Vec::new();
    let mut q_rows: Vec<DVector<f64>> = Vec::new();
    let mut tab_tau: Vec<DVector<f64>> = Vec::new();
    let mut unusable: HashSet<usize> = HashSet::new();
    let mut selected = Vec::new();
    let mut steps = Vec::new();
    let mut dependent_skipped = 0usize;
    let mut pair_phase = false;
    let mut worst_span: DMatrix<f64> = span_mu1;
    let mut reached_beta0 = false;
    let mut hit_l_max = false;
    let mut library_exhausted = false;

    loop {
        if selected.len() >= cfg.l_max {
            hit_l_max = true;
            break;
        }
        // Least observed unit state of the current worst span.
        let y_dir = least_observed_direction(&q_rows, &worst_span);
        let w: DVector<f64> =
            DVector::from_iterator(q_rows.len(), q_rows.iter().map(|r| r.dot(&y_dir)));
        let mut scores = &tab_z * &y_dir;
        for (k, col) in tab_tau.iter().enumerate() {
            scores -= col * w[k];
        }
        // Scan for the best usable functional, skipping dependent picks.
        let tau_new = loop {
            let mut best: Option<(f64, usize)> = None;
            for i in 0..library.len() {
                if unusable.contains(&i) {
                    continue;
                }
                let s = scores[i].abs() / library.dual_norms[i];
                if best.map(|(b, _)| s > b).unwrap_or(true) {
                    best = Some((s, i));
                }
            }
            let Some((_, g_idx)) = best else {
                break None;
            };
            let g = library.coefficient_vector(g_idx);
            let lift = DVector::from_vec(model.space.riesz(g.as_slice()));
            let scale = model.space.y_norm(lift.as_slice());
            let mut v = lift;
            for _ in 0..2 {
                for t in &tau_cols {
                    let c = model.space.y_inner(v.as_slice(), t.as_slice());
                    v -= t * c;
                }
            }
            let norm = model.space.y_norm(v.as_slice());
            if norm <= 1e-10 * scale {
                unusable.insert(g_idx);
                dependent_skipped += 1;
                continue;
            }
            break Some((g_idx, v / norm));
        };
        let Some((g_idx, tau)) = tau_new else {
            library_exhausted = true;
            break;
        };
        unusable.insert(g_idx);
        selected.push(g_idx);
        q_rows.push(kz.transpose() * &tau);
        tab_tau.push(DVector::from_iterator(
            library.len(),
            (0..library.len()).map(|i| library.value(i, &tau)),
        ));
        tau_cols.push(tau);

        // Criterion values after the expansion.
        let kappas: Vec<f64> = spans
            .par_iter()
            .map(|s| min_observed(&q_rows, s))
            .collect();
        let (mut kappa_min, mut worst_idx) = (f64::INFINITY, 0);
        for (i, &k) in kappas.iter().enumerate() {
            if k < kappa_min {
                kappa_min = k;
                worst_idx = i;
            }
        }
        let mut beta_pair_min = f64::NAN;
        let mut worst_pair = None;
        if pair_phase {
            let betas: Vec<f64> = pairs
                .par_iter()
                .map(|&(i, j)| {
                    let joined = mgs_cols(
                        &pair_spans[i]
                            .column_iter()
                            .chain(pair_spans[j].column_iter())
                            .map(|c| c.into_owned())
                            .collect::<Vec<_>>(),
                        1e-10,
                    );
                    min_observed(&q_rows, &joined)
                })
                .collect();
            beta_pair_min = f64::INFINITY;
            for (p, &b) in betas.iter().enumerate() {
                if b < beta_pair_min {
                    beta_pair_min = b;
                    worst_pair = Some(pairs[p]);
                }
            }
        }
        steps.push(OmpStep {
            iteration: selected.len(),
            library_index: g_idx,
            center: library.sensors.as_ref().map(|s| s[g_idx].center),
            kappa_min,
            beta_pair_min,
        });

        // Phase logic and the next worst span.
        if !pair_phase {
            if kappa_min > cfg.beta0 {
                if cfg.pair_mode {
                    pair_phase = true;
                } else {
                    reached_beta0 = true;
                    break;
                }
            } else {
                worst_span = spans[worst_idx].clone();
                continue;
            }
        }
        if pair_phase {
            // Entering or continuing the pair phase: evaluate its criterion
            // if the expansion step above has not already done so.
            let (beta, pair) = if beta_pair_min.is_nan() {
                let betas: Vec<f64> = pairs
                    .par_iter()
                    .map(|&(i, j)| {
                        let joined = mgs_cols(
                            &pair_spans[i]
                                .column_iter()
                                .chain(pair_spans[j].column_iter())
                                .map(|c| c.into_owned())
                                .collect::<Vec<_>>(),
                            1e-10,
                        );
                        min_observed(&q_rows, &joined)
                    })
                    .collect();
                let mut bmin = f64::INFINITY;
                let mut wp = None;
                for (p, &b) in betas.iter().enumerate() {
                    if b < bmin {
                        bmin = b;
                        wp = Some(pairs[p]);
                    }
                }
                if let Some(last) = steps.last_mut() {
                    last.beta_pair_min = bmin;
                }
                (bmin, wp)
            } else {
                (beta_pair_min, worst_pair)
            };
            if beta > cfg.beta0 {
                reached_beta0 = true;
                break;
            }
            let Some((i, j)) = pair else {
                reached_beta0 = true;
                break;
            };
            worst_span = mgs_cols(
                &pair_spans[i]
                    .column_iter()
                    .chain(pair_spans[j].column_iter())
                    .map(|c| c.into_owned())
                    .collect::<Vec<_>>(),
                1e-10,
            );
        }
    }

    let sensors = library
        .sensors
        .as_ref()
        .map(|s| selected.iter().map(|&i| s[i]).collect());
    Ok(OmpOutcome {
        selected,
        sensors,
        steps,
        reached_beta0,
        hit_l_max,
        library_exhausted,
        dependent_skipped,
    })
}
