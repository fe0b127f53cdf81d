use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spdhg::diagnostics::Metric;
use spdhg::harness::{self, ExperimentConfig, ProblemSource};
use spdhg::problems;

#[derive(Parser)]
#[command(name = "spdhg", version, about = "Stochastic primal-dual hybrid gradient experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the configured problem to a LIBSVM file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify a reference solution and write it as JSON.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run the experiment: CSV logs, aggregate, run.json and plot.svg.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suite; exits with status 1 on any violation.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a linear rate to a metric column of a trajectory CSV.
    Fit {
        csv: PathBuf,
        #[arg(long)]
        metric: Metric,
    },
}

fn load(config: &PathBuf, seed: Option<u64>) -> spdhg::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
        if let ProblemSource::Generated(spec) = &mut cfg.problem {
            spec.seed = s;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> spdhg::Result<bool> {
    match cli.cmd {
        Cmd::Generate { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let inst = harness::build_instance(&cfg)?;
            problems::write_libsvm(&out, &inst.data)?;
            println!("wrote {} rows x {} features to {}", inst.data.n(), inst.data.p, out.display());
        }
        Cmd::Certify { config, seed, out, tol } => {
            let cfg = load(&config, seed)?;
            let inst = harness::build_instance(&cfg)?;
            let mut rc = cfg.reference.clone().unwrap_or_default();
            if let Some(t) = tol {
                rc.tol = t;
            }
            let r = harness::certify_reference(&inst, &rc, &cfg.base_dir)?;
            harness::save_reference(&r, &out)?;
            println!(
                "{}: kkt {:.3e}, objective {:.12e}",
                r.provenance, r.kkt_residual, r.objective_star
            );
        }
        Cmd::Run { config, seed, out } => {
            // A per-seed problem override would change the instance, so only the seed list is narrowed.
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.output_dir = std::env::current_dir()?.join(o);
            }
            let res = harness::run_experiment(&cfg)?;
            let failed = res.trajectories.iter().filter(|t| t.error.is_some()).count();
            for t in res.trajectories.iter().filter(|t| t.error.is_some()) {
                eprintln!("{} seed {}: {}", t.label, t.seed, t.error.as_deref().unwrap_or(""));
            }
            println!(
                "{} trajectories ({} failed) written to {}",
                res.trajectories.len(),
                failed,
                res.dir.display()
            );
        }
        Cmd::Check { config, seed, tol, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(t) = tol {
                cfg.check.tol = t;
            }
            let report = harness::check_properties(&cfg)?;
            print!("{}", report.summary());
            if let Some(o) = out {
                std::fs::write(o, serde_json::to_string_pretty(&report)?)?;
            }
            return Ok(report.passed());
        }
        Cmd::Fit { csv, metric } => {
            for (method, seed, m) in harness::fit_csv(&csv, metric)? {
                println!(
                    "{method} seed {seed}: slope {:.6e} intercept {:.6e} r2 {:.4} window {}..{}",
                    m.slope, m.intercept, m.r_squared, m.window.0, m.window.1
                );
            }
        }
    }
    Ok(true)
}
