//! Command implementations behind the CLI: offline construction, certified
//! solves, stability reports, estimation, ensembles and benchmarks. Every
//! command is a pure function of (config, artifacts, seed); outputs are
//! versioned CSV/JSON files written atomically, with wall-clock timings kept
//! in a separate file so reruns stay byte-identical.

use crate::assimilate::{add_noise, solve_truth, MeasurementSpace, NOISE_RNG};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_parameters, noise_ensemble, CostFunctional, CostKind, EstimateOptions,
    EstimateReport, Solver,
};
use crate::io::{atomic_write, fmt_f64, CsvTable};
use crate::mesh_fem::functionals::{sensor_grid, GaussianSensor};
use crate::model::{CorrectionSource, ThermalBlockModel};
use crate::rb::{
    build_adjoint_space, build_state_space, error_bounds, merge_bases, residual_norms,
    select_functionals, solve_rb, FunctionalLibrary, GreedyReport, OmpConfig, OmpOutcome,
    RbSpaces,
};
use crate::stability::{
    alpha_a_lower_bound, build_response_basis, delta_true, eta_ratios, kappa_t,
};
use nalgebra::{DMatrix, DVector};
use std::path::Path;
use std::time::Instant;

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t0 = Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64())
}

fn fmt_cells(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| fmt_f64(*v)).collect()
}

/// Everything later commands need from the offline phase.
pub struct Offline {
    pub model: ThermalBlockModel,
    pub ms: MeasurementSpace,
    pub spaces: RbSpaces,
}

/// Dimension and selection summary reported by `cmd_offline`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OfflineSummary {
    pub n: usize,
    pub m_u: usize,
    pub n_sensors: usize,
    pub dim_state: usize,
    pub dim_adjoint: usize,
    pub dim_merged: usize,
    pub reached_beta0: bool,
    pub state_hit_max: bool,
    pub adjoint_hit_max: bool,
    pub state_final_estimator: f64,
    pub adjoint_final_estimator: f64,
}

fn greedy_trace_csv(report: &GreedyReport, path: &Path) -> Result<()> {
    let mut csv = CsvTable::new(
        "rb3dvar.greedy-trace.v1",
        &["iteration", "mu1", "mu2", "rhs", "estimator"],
    );
    for (i, step) in report.history.iter().enumerate() {
        let mut cells = fmt_cells(&[i as f64, step.mu[0], step.mu[1]]);
        cells.push(step.rhs.to_string());
        cells.push(fmt_f64(step.estimator));
        csv.push_row(&cells);
    }
    csv.write(path)
}

fn omp_trace_csv(out: &OmpOutcome, path: &Path) -> Result<()> {
    let mut csv = CsvTable::new(
        "rb3dvar.omp-trace.v1",
        &["iteration", "library_index", "center_x", "center_y", "kappa_min", "beta_pair_min"],
    );
    for step in &out.steps {
        let (cx, cy) = match step.center {
            Some(c) => (c[0], c[1]),
            None => (f64::NAN, f64::NAN),
        };
        let mut cells = vec![step.iteration.to_string(), step.library_index.to_string()];
        cells.extend(fmt_cells(&[cx, cy, step.kappa_min, step.beta_pair_min]));
        csv.push_row(&cells);
    }
    csv.write(path)
}

fn sensors_json(sensors: &[GaussianSensor]) -> String {
    let items: Vec<serde_json::Value> = sensors
        .iter()
        .map(|s| {
            serde_json::json!({
                "x": s.center[0],
                "y": s.center[1],
                "sigma": s.sigma,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "schema": "rb3dvar.sensors.v1",
        "sensors": items,
    }))
    .expect("sensor list serializes")
}

fn load_sensors(path: &Path) -> Result<Vec<GaussianSensor>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let items = v
        .get("sensors")
        .and_then(|s| s.as_array())
        .ok_or_else(|| Error::invalid("sensor file lacks a 'sensors' array"))?;
    items
        .iter()
        .map(|it| {
            let get = |k: &str| {
                it.get(k)
                    .and_then(|x| x.as_f64())
                    .ok_or_else(|| Error::invalid(format!("sensor entry lacks '{k}'")))
            };
            Ok(GaussianSensor { center: [get("x")?, get("y")?], sigma: get("sigma")? })
        })
        .collect()
}

/// Offline phase: state greedy, sensor selection, adjoint greedy, merge,
/// reduced-operator assembly, persistence. Returns the summary that was
/// also written to the manifest.
pub fn cmd_offline(cfg: &ExperimentConfig, out: &Path) -> Result<OfflineSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", out.display())))?;

    let (model, t_model) = timed(|| cfg.build_model());
    let model = model?;
    let u_r = DMatrix::<f64>::identity(model.m_u(), model.m_u());

    let state_train = model.domain.log_grid(cfg.rb.state_grid);
    let (state, t_state) = timed(|| {
        build_state_space(&model, &u_r, &state_train, cfg.rb.state_tol, cfg.rb.state_max)
    });
    let (z_y, tags_y, report_y) = state?;

    let (library, t_library) = timed(|| {
        FunctionalLibrary::from_sensors(
            &model.space,
            sensor_grid(
                cfg.measurement.library_grid,
                cfg.measurement.library_lo,
                cfg.measurement.library_hi,
                cfg.measurement.sensor_sigma,
            ),
        )
    });
    let library = library?;

    let xi_train = model.domain.log_grid(cfg.measurement.kappa_grid);
    let pair_train = if cfg.measurement.pair_mode {
        model.domain.log_grid(cfg.measurement.pair_grid)
    } else {
        Vec::new()
    };
    let omp_cfg = OmpConfig {
        beta0: cfg.measurement.beta0,
        l_max: cfg.measurement.l_max,
        mu1: vec![1.0, 1.0],
        pair_mode: cfg.measurement.pair_mode,
    };
    let (omp, t_omp) = timed(|| {
        select_functionals(&model, &z_y, &u_r, &library, &xi_train, &pair_train, &omp_cfg)
    });
    let omp = omp?;
    let sensors = omp
        .sensors
        .clone()
        .ok_or_else(|| Error::numerical("sensor library lost its metadata"))?;

    let (ms, t_ms) = timed(|| MeasurementSpace::build(&model.space, sensors.clone()));
    let ms = ms?;

    let boundary = model.domain.boundary_log_grid(cfg.rb.adjoint_grid);
    let (adjoint, t_adjoint) = timed(|| {
        build_adjoint_space(&model, &ms, &boundary, cfg.rb.adjoint_tol, cfg.rb.adjoint_max)
    });
    let (z_p, tags_p, report_p) = adjoint?;

    let merged = merge_bases(&model, &[(&z_y, &tags_y), (&z_p, &tags_p)])?;
    let (spaces, t_assemble) =
        timed(|| RbSpaces::build(&model, &ms, merged.0, merged.1, u_r));
    let spaces = spaces?;

    let summary = OfflineSummary {
        n: model.n(),
        m_u: model.m_u(),
        n_sensors: sensors.len(),
        dim_state: z_y.ncols(),
        dim_adjoint: z_p.ncols(),
        dim_merged: spaces.n_r(),
        reached_beta0: omp.reached_beta0,
        state_hit_max: report_y.hit_max,
        adjoint_hit_max: report_p.hit_max,
        state_final_estimator: report_y.final_estimator,
        adjoint_final_estimator: report_p.final_estimator,
    };

    spaces.save_basis(out)?;
    atomic_write(&out.join("sensors.json"), sensors_json(&sensors).as_bytes())?;
    omp_trace_csv(&omp, &out.join("omp_trace.csv"))?;
    greedy_trace_csv(&report_y, &out.join("state_greedy.csv"))?;
    greedy_trace_csv(&report_p, &out.join("adjoint_greedy.csv"))?;

    let manifest = serde_json::json!({
        "schema": "rb3dvar.offline-manifest.v1",
        "seed": cfg.run.seed,
        "rng": NOISE_RNG,
        "summary": serde_json::to_value(&summary).expect("summary serializes"),
        "selection": {
            "selected": omp.selected,
            "reached_beta0": omp.reached_beta0,
            "hit_l_max": omp.hit_l_max,
            "library_exhausted": omp.library_exhausted,
            "dependent_skipped": omp.dependent_skipped,
        },
        "config": serde_json::from_str::<serde_json::Value>(&cfg.to_json())
            .expect("config echo"),
    });
    atomic_write(
        &out.join("offline_manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest").as_bytes(),
    )?;

    let timings = serde_json::json!({
        "schema": "rb3dvar.timings.v1",
        "stage_seconds": {
            "model": t_model,
            "state_greedy": t_state,
            "library": t_library,
            "selection": t_omp,
            "measurement_space": t_ms,
            "adjoint_greedy": t_adjoint,
            "assemble": t_assemble,
        },
    });
    atomic_write(
        &out.join("timings.json"),
        serde_json::to_string_pretty(&timings).expect("timings").as_bytes(),
    )?;

    Ok(summary)
}

/// Rebuilds the model and loads persisted offline artifacts.
pub fn load_offline(cfg: &ExperimentConfig, dir: &Path) -> Result<Offline> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let sensors = load_sensors(&dir.join("sensors.json"))?;
    let ms = MeasurementSpace::build(&model.space, sensors)?;
    let spaces = RbSpaces::load_basis(&model, &ms, dir)?;
    Ok(Offline { model, ms, spaces })
}

/// Clean and noisy synthetic measurements from the stored truth.
pub fn generated_data(
    model: &ThermalBlockModel,
    ms: &MeasurementSpace,
    sigma: f64,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let y_true = model.manufacture_truth(
        &model.mu_true.clone(),
        CorrectionSource::EdgeP1(&model.u_true_values),
    )?;
    let clean = ms.measure(&y_true);
    let noisy = add_noise(&clean, sigma, seed);
    Ok((clean, noisy))
}

/// One assimilation solve at (mu, lambda) with synthetic noisy data; writes
/// `solution.json`, plus `bounds.csv` when the reduced solver is used.
pub fn cmd_solve(
    cfg: &ExperimentConfig,
    offline_dir: &Path,
    out: &Path,
    mu: &[f64],
    lambda: f64,
    solver: &str,
) -> Result<()> {
    let off = load_offline(cfg, offline_dir)?;
    std::fs::create_dir_all(out)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", out.display())))?;
    let (_, data) = generated_data(&off.model, &off.ms, cfg.run.sigma, cfg.run.seed)?;

    let mut bounds_json = serde_json::Value::Null;
    let (u_poly, cost, misfit) = match solver {
        "truth" => {
            let sol = solve_truth(&off.model, &off.ms, mu, lambda, &data)?;
            ((&off.model.u_start + &sol.u_star), sol.cost, sol.d_coords.norm())
        }
        "rb" => {
            let sol = solve_rb(&off.spaces, mu, lambda, &data)?;
            let norms = residual_norms(&off.spaces, &sol)?;
            let alpha = off.model.coercivity_lower_bound(mu)?;
            let b = error_bounds(&norms, alpha, off.model.gamma_b, lambda)?;
            let mut csv = CsvTable::new(
                "rb3dvar.bounds.v1",
                &[
                    "mu1", "mu2", "lambda", "r_u", "r_p", "r_y", "alpha_lb", "delta_u",
                    "delta_y", "delta_d", "delta_p",
                ],
            );
            csv.push_row(&fmt_cells(&[
                mu[0], mu[1], lambda, norms.r_u, norms.r_p, norms.r_y, alpha, b.delta_u,
                b.delta_y, b.delta_d, b.delta_p,
            ]));
            csv.write(&out.join("bounds.csv"))?;
            bounds_json = serde_json::json!({
                "delta_u": b.delta_u,
                "delta_y": b.delta_y,
                "delta_d": b.delta_d,
                "delta_p": b.delta_p,
            });
            let u_full = sol.lift_correction(&off.spaces);
            ((&off.model.u_start + u_full), sol.cost, sol.misfit_norm())
        }
        other => return Err(Error::invalid(format!("unknown solver '{other}'"))),
    };

    let solution = serde_json::json!({
        "schema": "rb3dvar.solution.v1",
        "solver": solver,
        "mu": mu,
        "lambda": lambda,
        "seed": cfg.run.seed,
        "rng": NOISE_RNG,
        "sigma": cfg.run.sigma,
        "cost": cost,
        "misfit_norm": misfit,
        "u_coeffs": u_poly.as_slice(),
        "bounds": bounds_json,
    });
    atomic_write(
        &out.join("solution.json"),
        serde_json::to_string_pretty(&solution).expect("solution").as_bytes(),
    )
}

/// Stability constants at one parameter over a lambda sweep.
pub fn cmd_stability(
    cfg: &ExperimentConfig,
    offline_dir: &Path,
    out: &Path,
    mu: &[f64],
    lambdas: &[f64],
) -> Result<()> {
    let off = load_offline(cfg, offline_dir)?;
    std::fs::create_dir_all(out)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", out.display())))?;
    let rb = build_response_basis(&off.model, &off.ms, mu)?;
    let kappa = kappa_t(&rb)?;
    let (eta_low, eta_high) = eta_ratios(&rb)?;
    let mut csv = CsvTable::new(
        "rb3dvar.stability.v1",
        &[
            "mu1", "mu2", "lambda", "kappa_t", "eta_low", "eta_high", "alpha_a_lb",
            "delta", "ratio", "chain_lower", "chain_upper",
        ],
    );
    for &lambda in lambdas {
        let alpha = alpha_a_lower_bound(lambda, eta_low, eta_high, kappa)?;
        let delta = delta_true(&rb, lambda)?;
        csv.push_row(&fmt_cells(&[
            mu[0],
            mu[1],
            lambda,
            kappa,
            eta_low,
            eta_high,
            alpha,
            delta,
            delta / alpha,
            1.0 / (1.0 + eta_high * eta_high),
            lambda.max(1.0),
        ]));
    }
    csv.write(&out.join("stability.csv"))
}

fn solver_for<'a>(off: &'a Offline, name: &str) -> Result<Solver<'a>> {
    match name {
        "truth" => Ok(Solver::Truth { model: &off.model, ms: &off.ms }),
        "rb" => Ok(Solver::Reduced { spaces: &off.spaces }),
        other => Err(Error::invalid(format!("unknown solver '{other}'"))),
    }
}

fn estimate_row(
    csv: &mut CsvTable,
    kind: CostKind,
    lambda: f64,
    solver: &str,
    rep: &EstimateReport,
) {
    let mut cells = vec![kind.name().to_string()];
    cells.push(fmt_f64(lambda));
    cells.push(solver.to_string());
    cells.extend(fmt_cells(&[
        rep.mu_hat[0],
        rep.mu_hat[1],
        rep.log_distance_to_true,
        rep.value,
    ]));
    cells.push(rep.evals.to_string());
    cells.push(rep.converged.to_string());
    cells.extend(fmt_cells(&[rep.u_error, rep.y_error]));
    csv.push_row(&cells);
}

/// Parameter estimation on noise-free data over the run matrix
/// (cost kinds x lambdas), optionally restricted by the CLI.
pub fn cmd_estimate(
    cfg: &ExperimentConfig,
    offline_dir: &Path,
    out: &Path,
    only_cost: Option<CostKind>,
    only_lambda: Option<f64>,
) -> Result<()> {
    let off = load_offline(cfg, offline_dir)?;
    std::fs::create_dir_all(out)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", out.display())))?;
    let (clean, _) = generated_data(&off.model, &off.ms, 0.0, cfg.run.seed)?;
    let solver = solver_for(&off, &cfg.run.solver)?;

    let kinds: Vec<CostKind> = match only_cost {
        Some(k) => vec![k],
        None => vec![CostKind::J1, CostKind::J2, CostKind::J3],
    };
    let lambdas: Vec<f64> = match only_lambda {
        Some(l) => vec![l],
        None => cfg.run.lambdas.clone(),
    };

    let mut csv = CsvTable::new(
        "rb3dvar.estimates.v1",
        &[
            "cost", "lambda", "solver", "mu1_hat", "mu2_hat", "log_distance", "value",
            "evals", "converged", "u_error", "y_error",
        ],
    );
    let opts = EstimateOptions::default();
    for &kind in &kinds {
        for &lambda in &lambdas {
            let cf = CostFunctional { kind, lambda, solver, data: clean.clone() };
            let rep = estimate_parameters(&off.model, &cf, &opts)?;
            estimate_row(&mut csv, kind, lambda, &cfg.run.solver, &rep);
        }
    }
    csv.write(&out.join("estimates.csv"))
}

/// Noise ensemble around the noise-free estimate at one (cost, lambda).
pub fn cmd_ensemble(
    cfg: &ExperimentConfig,
    offline_dir: &Path,
    out: &Path,
    only_cost: Option<CostKind>,
    only_lambda: Option<f64>,
) -> Result<()> {
    let off = load_offline(cfg, offline_dir)?;
    std::fs::create_dir_all(out)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", out.display())))?;
    let kind = match only_cost {
        Some(k) => k,
        None => CostKind::parse(&cfg.run.cost)?,
    };
    let lambda = only_lambda.unwrap_or(cfg.run.lambdas[0]);
    let (clean, _) = generated_data(&off.model, &off.ms, 0.0, cfg.run.seed)?;
    let solver = solver_for(&off, &cfg.run.solver)?;
    let opts = EstimateOptions::default();
    let rep = noise_ensemble(
        &off.model,
        kind,
        lambda,
        solver,
        &clean,
        cfg.run.sigma,
        cfg.run.n_seeds,
        cfg.run.seed,
        &opts,
    )?;

    let mut csv = CsvTable::new(
        "rb3dvar.ensemble.v1",
        &["seed", "mu1_hat", "mu2_hat", "log_distance"],
    );
    for m in &rep.members {
        let (m1, m2) = match &m.mu_hat {
            Some(mu) => (mu[0], mu[1]),
            None => (f64::NAN, f64::NAN),
        };
        let mut cells = vec![m.seed.to_string()];
        cells.extend(fmt_cells(&[m1, m2, m.log_distance]));
        csv.push_row(&cells);
    }
    csv.write(&out.join("ensemble.csv"))?;

    let summary = serde_json::json!({
        "schema": "rb3dvar.ensemble-summary.v1",
        "cost": kind.name(),
        "lambda": lambda,
        "solver": cfg.run.solver,
        "sigma": cfg.run.sigma,
        "n_seeds": cfg.run.n_seeds,
        "base_seed": cfg.run.seed,
        "rng": NOISE_RNG,
        "noise_free_mu": rep.noise_free.mu_hat,
        "min": rep.min,
        "mean": rep.mean,
        "max": rep.max,
        "failures": rep.failures,
    });
    atomic_write(
        &out.join("ensemble_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary").as_bytes(),
    )
}

/// Benchmark summary for one mesh: medians over repetitions of the mean
/// per-parameter wall time.
#[derive(Debug, Clone, Copy)]
pub struct BenchSummary {
    pub n: usize,
    pub n_params: usize,
    pub reps: usize,
    pub truth_mean_s: f64,
    pub rb_solve_mean_s: f64,
    pub rb_bound_mean_s: f64,
    pub speedup: f64,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Times truth solves against reduced solves-with-bounds over a random
/// parameter sample; the speedup compares against the full reduced pipeline
/// (solve + residual norms + bounds).
pub fn cmd_bench(
    cfg: &ExperimentConfig,
    offline_dir: &Path,
    out: &Path,
    n_params: usize,
    reps: usize,
) -> Result<BenchSummary> {
    if n_params == 0 || reps == 0 {
        return Err(Error::invalid("bench needs positive sample and repetition counts"));
    }
    let off = load_offline(cfg, offline_dir)?;
    std::fs::create_dir_all(out)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", out.display())))?;
    let (_, data) = generated_data(&off.model, &off.ms, cfg.run.sigma, cfg.run.seed)?;
    let lambda = 100.0;

    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.run.seed ^ 0xbe9c);
    let params: Vec<Vec<f64>> =
        (0..n_params).map(|_| off.model.domain.sample_log_uniform(&mut rng)).collect();

    let mut truth_means = Vec::with_capacity(reps);
    let mut solve_means = Vec::with_capacity(reps);
    let mut bound_means = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (res, t_truth) = timed(|| -> Result<f64> {
            let mut sink = 0.0;
            for mu in &params {
                let sol = solve_truth(&off.model, &off.ms, mu, lambda, &data)?;
                sink += sol.cost;
            }
            Ok(sink)
        });
        res?;
        truth_means.push(t_truth / n_params as f64);

        let mut sols = Vec::with_capacity(n_params);
        let (res, t_solve) = timed(|| -> Result<f64> {
            let mut sink = 0.0;
            for mu in &params {
                let sol = solve_rb(&off.spaces, mu, lambda, &data)?;
                sink += sol.cost;
                sols.push(sol);
            }
            Ok(sink)
        });
        res?;
        solve_means.push(t_solve / n_params as f64);

        let (res, t_bound) = timed(|| -> Result<f64> {
            let mut sink = 0.0;
            for sol in &sols {
                let norms = residual_norms(&off.spaces, sol)?;
                let alpha = off.model.coercivity_lower_bound(&sol.mu)?;
                let b = error_bounds(&norms, alpha, off.model.gamma_b, lambda)?;
                sink += b.delta_u;
            }
            Ok(sink)
        });
        res?;
        bound_means.push(t_bound / n_params as f64);
    }

    let truth_mean_s = median(&mut truth_means);
    let rb_solve_mean_s = median(&mut solve_means);
    let rb_bound_mean_s = median(&mut bound_means);
    let summary = BenchSummary {
        n: off.model.n(),
        n_params,
        reps,
        truth_mean_s,
        rb_solve_mean_s,
        rb_bound_mean_s,
        speedup: truth_mean_s / (rb_solve_mean_s + rb_bound_mean_s),
    };

    let mut csv = CsvTable::new(
        "rb3dvar.bench.v1",
        &[
            "n", "n_params", "reps", "truth_mean_s", "rb_solve_mean_s",
            "rb_bound_mean_s", "speedup",
        ],
    );
    let mut cells = vec![
        summary.n.to_string(),
        summary.n_params.to_string(),
        summary.reps.to_string(),
    ];
    cells.extend(fmt_cells(&[
        summary.truth_mean_s,
        summary.rb_solve_mean_s,
        summary.rb_bound_mean_s,
        summary.speedup,
    ]));
    csv.push_row(&cells);
    csv.write(&out.join("bench.csv"))?;
    Ok(summary)
}
