//! Command-line front end. Every subcommand reads one config file, an
//! artifact directory, and a seed, and is deterministic given those three.
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure.

use clap::{Parser, Subcommand};
use rb3dvar_core::config::ExperimentConfig;
use rb3dvar_core::error::{Error, Result};
use rb3dvar_core::estimate::CostKind;
use rb3dvar_core::pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rb3dvar", version, about = "Certified reduced-basis 3D-VAR toolkit")]
struct Cli {
    /// Experiment configuration (TOML or JSON); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory: offline writes here, every other command reads
    /// the offline artifacts from here and adds its own outputs
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Base seed for all randomness (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist the reduced spaces and the sensor selection
    Offline,
    /// One assimilation solve with synthetic data; reduced solves are certified
    Solve {
        /// Parameter as "mu1,mu2" (defaults to the configured truth)
        #[arg(long)]
        mu: Option<String>,
        /// Regularization weight
        #[arg(long, default_value_t = 100.0)]
        lambda: f64,
        /// truth | rb
        #[arg(long)]
        solver: Option<String>,
    },
    /// Inf-sup and coercivity constants over a lambda sweep at one parameter
    Stability {
        #[arg(long)]
        mu: Option<String>,
        /// May repeat; defaults to a log grid on [1e-1, 1e4]
        #[arg(long)]
        lambda: Vec<f64>,
    },
    /// Parameter estimation on noise-free data over costs x lambdas
    Estimate {
        /// Restrict to one objective: j1 | j2 | j3
        #[arg(long)]
        cost: Option<String>,
        /// Restrict to one regularization weight
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        solver: Option<String>,
    },
    /// Repeat one estimate under independent noise draws
    Ensemble {
        #[arg(long)]
        cost: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        solver: Option<String>,
    },
    /// Wall-clock comparison of truth solves vs certified reduced solves
    Bench {
        /// Number of random parameters per repetition
        #[arg(long, default_value_t = 200)]
        n_params: usize,
        /// Repetitions; medians are reported
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
}

fn parse_mu(text: Option<&str>, fallback: &[f64]) -> Result<Vec<f64>> {
    match text {
        None => Ok(fallback.to_vec()),
        Some(s) => {
            let parts: Vec<&str> = s.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::invalid(format!(
                    "--mu expects 'mu1,mu2', got '{s}'"
                )));
            }
            parts
                .iter()
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad parameter value '{p}'")))
                })
                .collect()
        }
    }
}

fn default_lambda_sweep() -> Vec<f64> {
    let n = 26;
    (0..n)
        .map(|i| 10f64.powf(-1.0 + 5.0 * i as f64 / (n - 1) as f64))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }

    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    let out = cli.out.as_path();

    match cli.command {
        Command::Offline => {
            let summary = pipeline::cmd_offline(&cfg, out)?;
            println!(
                "offline: n={} sensors={} state={} adjoint={} merged={}",
                summary.n,
                summary.n_sensors,
                summary.dim_state,
                summary.dim_adjoint,
                summary.dim_merged
            );
        }
        Command::Solve { mu, lambda, solver } => {
            let mu = parse_mu(mu.as_deref(), &cfg.model.mu_true)?;
            let solver = solver.unwrap_or_else(|| cfg.run.solver.clone());
            pipeline::cmd_solve(&cfg, out, out, &mu, lambda, &solver)?;
            println!("solve: wrote {}", out.join("solution.json").display());
        }
        Command::Stability { mu, lambda } => {
            let mu = parse_mu(mu.as_deref(), &cfg.model.mu_true)?;
            let lambdas = if lambda.is_empty() { default_lambda_sweep() } else { lambda };
            pipeline::cmd_stability(&cfg, out, out, &mu, &lambdas)?;
            println!("stability: wrote {}", out.join("stability.csv").display());
        }
        Command::Estimate { cost, lambda, solver } => {
            if let Some(s) = solver {
                cfg.run.solver = s;
            }
            let cost = cost.as_deref().map(CostKind::parse).transpose()?;
            pipeline::cmd_estimate(&cfg, out, out, cost, lambda)?;
            println!("estimate: wrote {}", out.join("estimates.csv").display());
        }
        Command::Ensemble { cost, lambda, solver } => {
            if let Some(s) = solver {
                cfg.run.solver = s;
            }
            let cost = cost.as_deref().map(CostKind::parse).transpose()?;
            pipeline::cmd_ensemble(&cfg, out, out, cost, lambda)?;
            println!("ensemble: wrote {}", out.join("ensemble_summary.json").display());
        }
        Command::Bench { n_params, reps } => {
            let summary = pipeline::cmd_bench(&cfg, out, out, n_params, reps)?;
            println!(
                "bench: n={} truth={:.3e}s rb={:.3e}s speedup={:.1}x",
                summary.n,
                summary.truth_mean_s,
                summary.rb_solve_mean_s + summary.rb_bound_mean_s,
                summary.speedup
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
