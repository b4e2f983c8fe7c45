//! One experiment configuration drives every command: mesh and model setup,
//! sensor-library and selection settings, reduced-space construction and the
//! run matrix. Files are TOML or JSON, chosen by extension; omitted sections
//! fall back to the default desk-scale setup, while fields inside a provided
//! section must be complete so schema errors name the missing key.

use crate::error::{Error, Result};
use crate::model::{ThermalBlockModel, UTrueSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { nx: 64, ny: 64 }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UTrueConfig {
    SinePlusConstant { offset: f64, amplitude: f64 },
    Polynomial { coeffs: Vec<f64> },
}

impl UTrueConfig {
    pub fn to_spec(&self) -> UTrueSpec {
        match self {
            UTrueConfig::SinePlusConstant { offset, amplitude } => {
                UTrueSpec::SinePlusConstant { offset: *offset, amplitude: *amplitude }
            }
            UTrueConfig::Polynomial { coeffs } => {
                UTrueSpec::Polynomial { coeffs: coeffs.clone() }
            }
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Polynomial degree of the correction space; dimension is degree + 1.
    pub poly_degree: usize,
    pub mu_true: [f64; 2],
    pub u_true: UTrueConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            poly_degree: 3,
            mu_true: [7.0, 0.3],
            u_true: UTrueConfig::SinePlusConstant { offset: 0.4, amplitude: 1.0 },
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Candidate sensors per side of the library grid.
    pub library_grid: usize,
    pub library_lo: f64,
    pub library_hi: f64,
    /// Width of each Gaussian sensor.
    pub sensor_sigma: f64,
    /// Worst-case observability target for the selection loop.
    pub beta0: f64,
    /// Sensor budget.
    pub l_max: usize,
    /// Parameters per side of the selection training grid.
    pub kappa_grid: usize,
    /// Parameters per side of the pair-distinguishability grid.
    pub pair_grid: usize,
    /// Keep selecting for pair distinguishability after the target is met.
    pub pair_mode: bool,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            library_grid: 97,
            library_lo: 0.02,
            library_hi: 0.98,
            sensor_sigma: 0.01,
            beta0: 0.5,
            l_max: 30,
            kappa_grid: 21,
            pair_grid: 21,
            pair_mode: true,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RbConfig {
    /// Relative target for the state-space estimator.
    pub state_tol: f64,
    pub state_max: usize,
    /// Parameters per side of the state training grid.
    pub state_grid: usize,
    /// Relative target for the adjoint-space estimator.
    pub adjoint_tol: f64,
    pub adjoint_max: usize,
    /// Training parameters on the boundary of the log box.
    pub adjoint_grid: usize,
}

impl Default for RbConfig {
    fn default() -> Self {
        RbConfig {
            state_tol: 1e-5,
            state_max: 200,
            state_grid: 41,
            adjoint_tol: 1e-5,
            adjoint_max: 250,
            adjoint_grid: 40,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lambdas: Vec<f64>,
    /// Noise level for generated data (solve and ensemble commands).
    pub sigma: f64,
    /// Base seed; all randomness flows from it.
    pub seed: u64,
    /// Cost kind for estimation commands: j1, j2 or j3.
    pub cost: String,
    /// Inner solver for estimation commands: truth or rb.
    pub solver: String,
    /// Ensemble size.
    pub n_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambdas: vec![1.0, 10.0, 100.0, 1000.0],
            sigma: 0.01,
            seed: 0,
            cost: "j3".into(),
            solver: "rb".into(),
            n_seeds: 100,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub rb: RbConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Reads TOML or JSON depending on the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let cfg: ExperimentConfig = match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?,
            "json" => serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?,
            other => {
                return Err(Error::invalid(format!(
                    "unsupported config extension '{other}' (use .toml or .json)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        if m.nx < 2 || m.ny < 2 {
            return Err(Error::invalid("mesh.nx and mesh.ny must be at least 2"));
        }
        if self.model.poly_degree > 7 {
            return Err(Error::invalid("model.poly_degree must be at most 7"));
        }
        let ms = &self.measurement;
        if !(ms.library_lo > 0.0 && ms.library_hi < 1.0 && ms.library_lo < ms.library_hi) {
            return Err(Error::invalid(
                "measurement library window must satisfy 0 < lo < hi < 1",
            ));
        }
        if ms.library_grid < 2 || ms.kappa_grid < 2 || ms.pair_grid < 2 {
            return Err(Error::invalid("measurement grids need at least 2 points per side"));
        }
        if !(ms.sensor_sigma > 0.0) {
            return Err(Error::invalid("measurement.sensor_sigma must be positive"));
        }
        if !(ms.beta0 > 0.0) {
            return Err(Error::invalid("measurement.beta0 must be positive"));
        }
        if ms.l_max == 0 {
            return Err(Error::invalid("measurement.l_max must be positive"));
        }
        let rb = &self.rb;
        if !(rb.state_tol > 0.0 && rb.adjoint_tol > 0.0) {
            return Err(Error::invalid("rb tolerances must be positive"));
        }
        if rb.state_max == 0 || rb.adjoint_max == 0 {
            return Err(Error::invalid("rb basis budgets must be positive"));
        }
        if rb.state_grid < 2 || rb.adjoint_grid < 2 {
            return Err(Error::invalid("rb training grids need at least 2 points"));
        }
        let run = &self.run;
        if run.lambdas.is_empty() {
            return Err(Error::invalid("run.lambdas must not be empty"));
        }
        if run.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::invalid("run.lambdas must be nonnegative"));
        }
        if run.sigma < 0.0 {
            return Err(Error::invalid("run.sigma must be nonnegative"));
        }
        crate::estimate::CostKind::parse(&run.cost)?;
        if run.solver != "truth" && run.solver != "rb" {
            return Err(Error::invalid(format!(
                "run.solver must be 'truth' or 'rb', got '{}'",
                run.solver
            )));
        }
        if run.n_seeds < 2 {
            return Err(Error::invalid("run.n_seeds must be at least 2"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ThermalBlockModel> {
        ThermalBlockModel::build(
            self.mesh.nx,
            self.mesh.ny,
            self.model.poly_degree,
            self.model.mu_true.to_vec(),
            self.model.u_true.to_spec(),
        )
    }

    /// Canonical JSON echo recorded in output manifests.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip_both_formats() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.mesh.nx, 64);
        assert_eq!(cfg.measurement.library_grid, 97);
        assert_eq!(cfg.rb.state_grid, 41);
        assert_eq!(cfg.run.lambdas, vec![1.0, 10.0, 100.0, 1000.0]);

        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("a.toml");
        std::fs::write(&toml_path, toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&toml_path).unwrap(), cfg);

        let json_path = dir.path().join("a.json");
        std::fs::write(&json_path, cfg.to_json()).unwrap();
        assert_eq!(ExperimentConfig::load(&json_path).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults_but_sections_must_be_complete() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("partial.toml");
        std::fs::write(&p, "[mesh]\nnx = 16\nny = 12\n").unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        assert_eq!((cfg.mesh.nx, cfg.mesh.ny), (16, 12));
        assert_eq!(cfg.measurement.beta0, 0.5);

        let q = dir.path().join("missing.toml");
        std::fs::write(&q, "[mesh]\nnx = 16\n").unwrap();
        let err = ExperimentConfig::load(&q).unwrap_err().to_string();
        assert!(err.contains("ny"), "error should name the missing field: {err}");
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("typo.toml");
        std::fs::write(&p, "[mesh]\nnx = 16\nny = 16\nmz = 3\n").unwrap();
        assert!(ExperimentConfig::load(&p).is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.model.poly_degree = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.run.cost = "j9".into();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.run.solver = "magic".into();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.measurement.library_lo = 0.9;
        cfg.measurement.library_hi = 0.1;
        assert!(cfg.validate().is_err());

        let r = dir.path().join("conf.yaml");
        std::fs::write(&r, "mesh: {}").unwrap();
        assert!(ExperimentConfig::load(&r).is_err());
    }
}
