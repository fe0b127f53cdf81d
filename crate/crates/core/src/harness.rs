//! Experiment plumbing: TOML configs, reference certification, multi-seed
//! runs with CSV/JSON/SVG output, replay, rate fits over CSV logs and the
//! property-check suite.
//!
//! Output directory layout of [`run_experiment`]:
//!
//! ```text
//!     <label>_seed<k>.csv   iter,epoch,seed,method,<metric...>
//!     aggregate.csv         per-iteration mean/std/min/max across seeds
//!     reference.json        certified (x*, y*) when a reference was needed
//!     run.json              config echo, seeds, step sizes, block norms, provenance
//!     plot.svg              log-scale metric against epochs, one curve per solver
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, ConvergenceRecord, KktWeighting, Metric, RateModel};
use crate::error::{Error, Result};
use crate::funcs::ProxableFunction;
use crate::linalg;
use crate::problems::{self, Dataset, GeneratorSpec, LoadOptions, ProblemKind};
use crate::sampling::{self, DualUpdateSnapshot, ExpectationMode, SamplerSpec};
use crate::solver::{
    self, ReferenceSolution, RunConfig, RunOutput, SaddleProblem, SolverState, StepSizes, StopRule, SvrgOptions,
    DEFAULT_GAMMA,
};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "SPDHG_THREADS";

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spdhg,
    SpdhgMu,
    Pdhg,
    FbVcCd,
    Svrg,
    Sdca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Spdhg => "spdhg",
            Method::SpdhgMu => "spdhg_mu",
            Method::Pdhg => "pdhg",
            Method::FbVcCd => "fb_vc_cd",
            Method::Svrg => "svrg",
            Method::Sdca => "sdca",
        }
    }

    /// Metrics that need a meaningful dual iterate.
    fn supports(self, m: Metric) -> bool {
        self != Method::Svrg
            || matches!(
                m,
                Metric::ObjectiveResidual
                    | Metric::ObjectiveResidualAvg
                    | Metric::DistToRef
                    | Metric::Feasibility
                    | Metric::FeasibilityWeighted
                    | Metric::FeasibilityAvgWeighted
            )
    }
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub tau: Option<f64>,
    pub sigma: Option<Vec<f64>>,
    /// Non-uniform block probabilities.
    pub probs: Option<Vec<f64>>,
    /// SVRG step as a fraction of `1/L_max`.
    pub step_scale: Option<f64>,
    /// SVRG inner loop length in multiples of `n`.
    pub inner_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// File-name label; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub overrides: SolverOverrides,
}

impl SolverConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            gamma: DEFAULT_GAMMA,
            label: None,
            overrides: SolverOverrides::default(),
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.name().to_string())
    }
}

fn default_block() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileProblem {
    /// LIBSVM file, relative to the config file.
    pub file: PathBuf,
    pub kind: ProblemKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub lambda_rel: Option<f64>,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub p: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    File(FileProblem),
    Generated(GeneratorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    Planted,
    PdhgOracle,
    File,
}

fn default_ref_tol() -> f64 {
    1e-12
}
fn default_ref_iters() -> u64 {
    2_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub mode: ReferenceMode,
    /// Euclidean KKT tolerance.
    #[serde(default = "default_ref_tol")]
    pub tol: f64,
    /// `reference.json` to load in `file` mode.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_ref_iters")]
    pub max_iters: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            mode: ReferenceMode::PdhgOracle,
            tol: default_ref_tol(),
            path: None,
            max_iters: default_ref_iters(),
        }
    }
}

fn default_check_iters() -> u64 {
    200
}
fn default_points() -> usize {
    5
}
fn default_inputs() -> usize {
    1000
}
fn default_check_tol() -> f64 {
    1e-9
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_check_iters")]
    pub iterations: u64,
    /// Random test points for the one-step inequality, besides `z*`.
    #[serde(default = "default_points")]
    pub random_points: usize,
    /// Random inputs for the Lyapunov lower bounds.
    #[serde(default = "default_inputs")]
    pub random_inputs: usize,
    /// Monte Carlo draws for the sampler identities at the last checked
    /// iteration (0 disables them).
    #[serde(default)]
    pub mc_draws: usize,
    #[serde(default = "default_check_tol")]
    pub tol: f64,
    /// Multiplies the default `τ`; above 1 the step condition is violated.
    #[serde(default = "one")]
    pub tau_scale: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            iterations: default_check_iters(),
            random_points: default_points(),
            random_inputs: default_inputs(),
            mc_draws: 0,
            tol: default_check_tol(),
            tau_scale: 1.0,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_log_every() -> f64 {
    1.0
}
fn default_metrics() -> Vec<Metric> {
    vec![Metric::KktResidual]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    #[serde(default)]
    pub solvers: Vec<SolverConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub max_epochs: f64,
    #[serde(default = "default_log_every")]
    pub log_every_epochs: f64,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub stop: Option<StopRule>,
    #[serde(default)]
    pub reference: Option<ReferenceConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub check: CheckConfig,
    /// Directory relative paths are resolved against (the config file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSource) -> Self {
        Self {
            problem,
            solvers: vec![SolverConfig::new(Method::Spdhg)],
            seeds: default_seeds(),
            max_epochs: 0.0,
            log_every_epochs: 1.0,
            metrics: default_metrics(),
            stop: None,
            reference: None,
            output_dir: default_output(),
            check: CheckConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        for s in &self.solvers {
            if !(s.gamma > 0.0 && s.gamma < 1.0) {
                return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", s.gamma)));
            }
        }
        if !(self.max_epochs >= 0.0) || !(self.log_every_epochs > 0.0) {
            return Err(Error::Config("max_epochs must be >= 0 and log_every_epochs > 0".into()));
        }
        let mut labels: Vec<String> = self.solvers.iter().map(SolverConfig::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("solver labels must be unique (set `label`)".into()));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn needs_reference(&self) -> bool {
        self.metrics.iter().any(|m| m.needs_reference())
            || self.stop.is_some_and(|s| s.metric.needs_reference())
            || self.reference.is_some()
    }
}

/// A problem ready to solve, with the data behind it.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: SaddleProblem,
    pub data: Dataset,
    pub kind: ProblemKind,
    pub lambda: f64,
    pub x_planted: Option<Vec<f64>>,
}

pub fn build_instance(config: &ExperimentConfig) -> Result<Instance> {
    match &config.problem {
        ProblemSource::Generated(spec) => {
            let g = problems::generate(spec)?;
            Ok(Instance {
                problem: g.problem,
                data: g.data,
                kind: spec.kind,
                lambda: g.lambda,
                x_planted: g.x_planted,
            })
        }
        ProblemSource::File(fp) => {
            let data = problems::load_libsvm(
                &config.resolve(&fp.file),
                LoadOptions {
                    p_override: fp.p,
                    normalize: fp.normalize,
                },
            )?;
            let mut spec = GeneratorSpec::new(fp.kind, data.n().max(1), data.p.max(1));
            spec.lambda = fp.lambda;
            spec.lambda_rel = fp.lambda_rel;
            let lambda = problems::resolve_lambda(&spec, &data)?;
            let problem = problems::assemble(fp.kind, &data, lambda, fp.block_size)?;
            Ok(Instance {
                problem,
                data,
                kind: fp.kind,
                lambda,
                x_planted: None,
            })
        }
    }
}

/// Deterministic PDHG until the Euclidean KKT residual is at most `tol`.
pub fn pdhg_oracle(problem: &SaddleProblem, tol: f64, max_iters: u64) -> Result<ReferenceSolution> {
    let single = problem.single_block();
    let sampler = SamplerSpec::uniform(1, 0);
    let steps = solver::default_step_sizes(&single.a, DEFAULT_GAMMA, &sampler)?;
    let mut state = SolverState::zeros(&single);
    let check_every = 50;
    let mut best = f64::INFINITY;
    while state.k < max_iters {
        solver::spdhg_step(&mut state, &single, &steps, &sampler)?;
        if state.k % check_every == 0 {
            let r = diagnostics::kkt_residual(&single, &state.x, &state.y, KktWeighting::Euclidean)?;
            best = best.min(r);
            if r <= tol {
                return Ok(reference_from(problem, state.x, state.y, r, format!("pdhg_oracle: {} iterations", state.k)));
            }
        }
    }
    Err(Error::Certification {
        iters: state.k,
        best_residual: best,
    })
}

fn reference_from(problem: &SaddleProblem, x: Vec<f64>, y: Vec<f64>, kkt: f64, provenance: String) -> ReferenceSolution {
    let objective_star = if problem.is_constrained() {
        problem.g.value(&x)
    } else {
        problem.objective(&x)
    };
    ReferenceSolution {
        x_star: x,
        y_star: y,
        objective_star,
        provenance,
        kkt_residual: kkt,
    }
}

/// Least-norm dual certificate for a planted basis-pursuit solution:
/// `y = −A_S (A_S^T A_S)^{-1} sign(x_S)`, valid when `|A^T y| ≤ 1` off the support.
fn planted_certificate(problem: &SaddleProblem, x: &[f64], tol: f64) -> Option<ReferenceSolution> {
    if !problem.is_constrained() || !matches!(problem.g.kind(), crate::funcs::FunctionKind::L1 { .. }) {
        return None;
    }
    let support: Vec<usize> = (0..x.len()).filter(|&j| x[j] != 0.0).collect();
    let m = problem.dual_dim();
    if support.is_empty() || support.len() > m {
        return None;
    }
    let dense = problem.a.to_dense();
    let p = problem.primal_dim();
    let a_s = nalgebra::DMatrix::from_fn(m, support.len(), |r, c| dense[r * p + support[c]]);
    let lambda = match problem.g.kind() {
        crate::funcs::FunctionKind::L1 { lambda } => *lambda,
        _ => unreachable!(),
    };
    let s = nalgebra::DVector::from_iterator(support.len(), support.iter().map(|&j| lambda * x[j].signum()));
    let gram = a_s.transpose() * &a_s;
    let w = gram.cholesky()?.solve(&s);
    let y: Vec<f64> = (-(&a_s * w)).iter().copied().collect();
    let kkt = diagnostics::kkt_residual(problem, x, &y, KktWeighting::Euclidean).ok()?;
    (kkt <= tol).then(|| reference_from(problem, x.to_vec(), y, kkt, "planted: least-norm dual certificate".into()))
}

/// Loads `reference.json` and re-verifies its KKT residual.
pub fn load_reference(problem: &SaddleProblem, path: &Path, tol: f64) -> Result<ReferenceSolution> {
    let r: ReferenceSolution = serde_json::from_str(&fs::read_to_string(path)?)?;
    if r.x_star.len() != problem.primal_dim() || r.y_star.len() != problem.dual_dim() {
        return Err(Error::InvalidArgument("reference dimensions do not match the problem".into()));
    }
    let kkt = diagnostics::kkt_residual(problem, &r.x_star, &r.y_star, KktWeighting::Euclidean)?;
    if !(kkt <= tol) {
        return Err(Error::Certification {
            iters: 0,
            best_residual: kkt,
        });
    }
    Ok(r)
}

pub fn save_reference(reference: &ReferenceSolution, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(reference)?)?;
    Ok(())
}

/// Certifies a reference solution according to `config`.
pub fn certify_reference(instance: &Instance, config: &ReferenceConfig, base: &Path) -> Result<ReferenceSolution> {
    match config.mode {
        ReferenceMode::File => {
            let path = config
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("reference mode `file` needs `path`".into()))?;
            let path = if path.is_absolute() { path.clone() } else { base.join(path) };
            load_reference(&instance.problem, &path, config.tol)
        }
        ReferenceMode::Planted => {
            if let Some(x) = &instance.x_planted {
                if let Some(r) = planted_certificate(&instance.problem, x, config.tol) {
                    return Ok(r);
                }
            }
            pdhg_oracle(&instance.problem, config.tol, config.max_iters)
        }
        ReferenceMode::PdhgOracle => pdhg_oracle(&instance.problem, config.tol, config.max_iters),
    }
}

/// Step sizes and sampler a solver will use on `problem`.
pub fn solver_setup(problem: &SaddleProblem, solver: &SolverConfig, seed: u64) -> Result<(StepSizes, SamplerSpec)> {
    let ov = &solver.overrides;
    let (a, n) = if solver.method == Method::Pdhg {
        (problem.a.single_block(), 1)
    } else {
        (problem.a.clone(), problem.n_blocks())
    };
    let sampler = match &ov.probs {
        Some(p) if solver.method != Method::Pdhg => SamplerSpec::new(p.clone(), seed)?,
        _ => SamplerSpec::uniform(n, seed),
    };
    let base = match solver.method {
        Method::FbVcCd => solver::fb_vc_cd_step_sizes(&a, solver.gamma)?,
        Method::SpdhgMu => {
            let (mu_g, mu) = solver::strong_convexity_constants(problem)?;
            solver::strongly_convex_steps(problem, mu_g, &mu, solver.gamma, &sampler)?.steps
        }
        Method::Svrg | Method::Sdca => StepSizes::unchecked(1.0, vec![1.0; n], solver.gamma)?,
        Method::Spdhg | Method::Pdhg => solver::default_step_sizes(&a, solver.gamma, &sampler)?,
    };
    let steps = if ov.tau.is_some() || ov.sigma.is_some() {
        if !matches!(solver.method, Method::Spdhg | Method::Pdhg) {
            return Err(Error::Config(format!("step overrides are not supported for {}", solver.method.name())));
        }
        let tau = ov.tau.unwrap_or(base.tau());
        let sigma = ov.sigma.clone().unwrap_or_else(|| base.sigma().to_vec());
        StepSizes::new(tau, sigma, solver.gamma, &a, &sampler)?
    } else {
        base
    };
    Ok((steps, sampler))
}

/// Runs one (solver, seed) trajectory.
pub fn run_trajectory(
    problem: &SaddleProblem,
    solver_cfg: &SolverConfig,
    seed: u64,
    max_epochs: f64,
    log_every_epochs: f64,
    metrics: &[Metric],
    stop: Option<StopRule>,
) -> Result<RunOutput> {
    let (steps, sampler) = solver_setup(problem, solver_cfg, seed)?;
    let n = if solver_cfg.method == Method::Pdhg { 1 } else { problem.n_blocks() };
    let metrics: Vec<Metric> = metrics.iter().copied().filter(|m| solver_cfg.method.supports(*m)).collect();
    let svrg = SvrgOptions {
        step_scale: solver_cfg.overrides.step_scale.unwrap_or(SvrgOptions::default().step_scale),
        inner_factor: solver_cfg.overrides.inner_factor.unwrap_or(SvrgOptions::default().inner_factor),
    };
    // SVRG spends n evaluations per snapshot and two per inner step.
    let iters_per_epoch = if solver_cfg.method == Method::Svrg {
        let inner = (svrg.inner_factor * n as f64).round().max(1.0);
        n as f64 / (n as f64 / inner + 2.0)
    } else {
        n as f64
    };
    let mut config = RunConfig::new(
        (max_epochs * iters_per_epoch).round() as u64,
        ((log_every_epochs * iters_per_epoch).round() as u64).max(1),
    )
    .with_metrics(&metrics);
    config.stop = stop;
    match solver_cfg.method {
        Method::Spdhg => solver::run(problem, &steps, &sampler, &config),
        Method::Pdhg => solver::pdhg_run(problem, Some(&steps), solver_cfg.gamma, &config),
        Method::SpdhgMu => solver::spdhg_mu_run(problem, solver_cfg.gamma, &sampler, &config).map(|r| r.0),
        Method::FbVcCd => solver::fb_vc_cd_run(problem, solver_cfg.gamma, &sampler, &config),
        Method::Svrg => solver::svrg_run(problem, &sampler, svrg, &config),
        Method::Sdca => solver::sdca_run(problem, &sampler, &config),
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub label: String,
    pub method: Method,
    pub seed: u64,
    pub log: Vec<ConvergenceRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverMeta {
    pub label: String,
    pub method: Method,
    pub gamma: f64,
    pub tau: f64,
    pub sigma: Vec<f64>,
    pub max_step_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub label: String,
    pub seed: u64,
    pub file: String,
    pub logged: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    /// The configuration, as TOML.
    pub config: String,
    pub seeds: Vec<u64>,
    pub solvers: Vec<SolverMeta>,
    pub block_norms: Vec<f64>,
    pub lambda: f64,
    pub reference_file: Option<String>,
    pub reference_provenance: Option<String>,
    pub reference_kkt: Option<f64>,
    pub trajectories: Vec<TrajectoryMeta>,
    pub aggregate: String,
    pub band: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub trajectories: Vec<Trajectory>,
    pub metadata: RunMetadata,
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// Instance plus its reference (certified, or loaded from `reference.json`
/// in `dir` when `reuse` is set).
fn prepare(config: &ExperimentConfig, dir: &Path, reuse: bool) -> Result<(Instance, Option<ReferenceSolution>)> {
    let mut instance = build_instance(config)?;
    let reference = if config.needs_reference() {
        let rc = config.reference.clone().unwrap_or_default();
        let path = dir.join("reference.json");
        let r = if reuse && path.exists() {
            load_reference(&instance.problem, &path, rc.tol.max(1e-8))?
        } else {
            let r = certify_reference(&instance, &rc, &config.base_dir)?;
            save_reference(&r, &path)?;
            r
        };
        instance.problem = instance.problem.with_reference(r.clone())?;
        Some(r)
    } else {
        None
    };
    Ok((instance, reference))
}

pub fn trajectory_file(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.csv")
}

/// Runs every (solver, seed) pair and writes the artifacts to the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let dir = config.output_path();
    fs::create_dir_all(&dir)?;
    let (instance, reference) = prepare(config, &dir, false)?;
    let problem = &instance.problem;

    let mut solvers_meta = Vec::new();
    for s in &config.solvers {
        let (steps, sampler) = solver_setup(problem, s, config.seeds[0])?;
        let a = if s.method == Method::Pdhg { problem.a.single_block() } else { problem.a.clone() };
        let report = solver::validate_step_sizes(&steps, &a, &sampler)?;
        solvers_meta.push(SolverMeta {
            label: s.label(),
            method: s.method,
            gamma: s.gamma,
            tau: steps.tau(),
            sigma: steps.sigma().to_vec(),
            max_step_ratio: report.max_ratio,
        });
    }

    let jobs: Vec<(&SolverConfig, u64)> = config
        .solvers
        .iter()
        .flat_map(|s| config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let pool = thread_pool()?;
    let trajectories: Vec<Trajectory> = pool.install(|| {
        jobs.par_iter()
            .map(|(s, seed)| {
                let out = run_trajectory(
                    problem,
                    s,
                    *seed,
                    config.max_epochs,
                    config.log_every_epochs,
                    &config.metrics,
                    config.stop,
                );
                let (log, error) = match out {
                    Ok(o) => (o.log, None),
                    Err(e) => (Vec::new(), Some(e.to_string())),
                };
                Trajectory {
                    label: s.label(),
                    method: s.method,
                    seed: *seed,
                    log,
                    error,
                }
            })
            .collect()
    });

    let mut traj_meta = Vec::new();
    for t in &trajectories {
        let file = trajectory_file(&t.label, t.seed);
        write_trajectory_csv(&dir.join(&file), t)?;
        traj_meta.push(TrajectoryMeta {
            label: t.label.clone(),
            seed: t.seed,
            file,
            logged: t.log.len(),
            error: t.error.clone(),
        });
    }
    write_aggregate_csv(&dir.join("aggregate.csv"), &trajectories)?;
    let plot_metric = config.metrics.first().copied().or(config.stop.map(|s| s.metric));
    fs::write(dir.join("plot.svg"), render_svg(&trajectories, plot_metric))?;

    let metadata = RunMetadata {
        version: VERSION.to_string(),
        config: config.to_toml()?,
        seeds: config.seeds.clone(),
        solvers: solvers_meta,
        block_norms: problem.a.block_norms(),
        lambda: instance.lambda,
        reference_file: reference.as_ref().map(|_| "reference.json".to_string()),
        reference_provenance: reference.as_ref().map(|r| r.provenance.clone()),
        reference_kkt: reference.as_ref().map(|r| r.kkt_residual),
        trajectories: traj_meta,
        aggregate: "per-iteration mean, sample standard deviation, min and max over seeds".into(),
        band: "min-max".into(),
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&metadata)?)?;
    Ok(ExperimentOutput {
        dir,
        trajectories,
        metadata,
    })
}

/// Re-runs one trajectory from a `run.json`, using the reference stored next to it.
pub fn replay(run_json: &Path, label: &str, seed: u64) -> Result<Vec<ConvergenceRecord>> {
    let meta: RunMetadata = serde_json::from_str(&fs::read_to_string(run_json)?)?;
    let mut config = ExperimentConfig::from_toml(&meta.config)?;
    let dir = run_json.parent().map(Path::to_path_buf).unwrap_or_default();
    // Relative problem files were resolved against the original config location,
    // which the echo does not record; the output directory is the best anchor.
    config.base_dir = dir.clone();
    if let ProblemSource::File(fp) = &mut config.problem {
        if !fp.file.is_absolute() && !dir.join(&fp.file).exists() {
            return Err(Error::Config(format!(
                "problem file {} not found next to run.json",
                fp.file.display()
            )));
        }
    }
    let (instance, _) = prepare(&config, &dir, true)?;
    let solver_cfg = config
        .solvers
        .iter()
        .find(|s| s.label() == label)
        .ok_or_else(|| Error::Config(format!("no solver labelled `{label}` in run.json")))?;
    let out = run_trajectory(
        &instance.problem,
        solver_cfg,
        seed,
        config.max_epochs,
        config.log_every_epochs,
        &config.metrics,
        config.stop,
    )?;
    Ok(out.log)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn record_metrics(log: &[ConvergenceRecord]) -> Vec<Metric> {
    log.first().map(|r| r.values.iter().map(|(m, _)| *m).collect()).unwrap_or_default()
}

pub fn write_trajectory_csv(path: &Path, t: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let metrics = record_metrics(&t.log);
    let mut header = vec!["iter".to_string(), "epoch".into(), "seed".into(), "method".into()];
    header.extend(metrics.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for r in &t.log {
        let mut row = vec![r.iter.to_string(), fmt_f64(r.epoch), t.seed.to_string(), t.label.clone()];
        row.extend(metrics.iter().map(|m| r.get(*m).map(fmt_f64).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed row of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub iter: u64,
    pub epoch: f64,
    pub seed: u64,
    pub method: String,
    pub values: Vec<(String, Option<f64>)>,
}

impl CsvRow {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).and_then(|(_, v)| *v)
    }
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[..4] != ["iter", "epoch", "seed", "method"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected header iter,epoch,seed,method,...".into(),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 2,
            msg,
        };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad number `{s}`"))) };
        let iter = rec[0].parse().map_err(|_| bad(format!("bad iteration `{}`", &rec[0])))?;
        let seed = rec[2].parse().map_err(|_| bad(format!("bad seed `{}`", &rec[2])))?;
        let mut values = Vec::new();
        for (name, cell) in header[4..].iter().zip(rec.iter().skip(4)) {
            values.push((name.clone(), if cell.is_empty() { None } else { Some(num(cell)?) }));
        }
        rows.push(CsvRow {
            iter,
            epoch: num(&rec[1])?,
            seed,
            method: rec[3].to_string(),
            values,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Summary {
        mean,
        std: var.sqrt(),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        count: n,
    }
}

/// (label, iter) → (epoch, metric → per-seed values).
type Grouped = BTreeMap<(String, u64), (f64, BTreeMap<Metric, Vec<f64>>)>;

fn group(trajectories: &[Trajectory]) -> (Grouped, Vec<Metric>) {
    let mut groups: Grouped = BTreeMap::new();
    let mut metrics: Vec<Metric> = Vec::new();
    for t in trajectories {
        for r in &t.log {
            let e = groups
                .entry((t.label.clone(), r.iter))
                .or_insert_with(|| (r.epoch, BTreeMap::new()));
            for (m, v) in &r.values {
                if !metrics.contains(m) {
                    metrics.push(*m);
                }
                e.1.entry(*m).or_default().push(*v);
            }
        }
    }
    (groups, metrics)
}

pub fn write_aggregate_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let (groups, metrics) = group(trajectories);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "iter".into(), "epoch".into(), "n_seeds".into()];
    for m in &metrics {
        for s in ["mean", "std", "min", "max"] {
            header.push(format!("{}_{s}", m.name()));
        }
    }
    w.write_record(&header)?;
    for ((label, iter), (epoch, vals)) in &groups {
        let n_seeds = vals.values().map(Vec::len).max().unwrap_or(0);
        let mut row = vec![label.clone(), iter.to_string(), fmt_f64(*epoch), n_seeds.to_string()];
        for m in &metrics {
            match vals.get(m) {
                Some(v) => {
                    let s = summarize(v);
                    row.extend([s.mean, s.std, s.min, s.max].map(fmt_f64));
                }
                None => row.extend(std::iter::repeat(String::new()).take(4)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Log-y plot of `metric` against epochs: mean curve and min–max band per solver.
pub fn render_svg(trajectories: &[Trajectory], metric: Option<Metric>) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 440.0, 70.0, 150.0, 30.0, 50.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let Some(metric) = metric else {
        let _ = writeln!(svg, r#"<text x="{}" y="{}">no metric logged</text></svg>"#, ml, h / 2.0);
        return svg;
    };
    let (groups, _) = group(trajectories);
    let mut series: BTreeMap<String, Vec<(f64, Summary)>> = BTreeMap::new();
    for ((label, _), (epoch, vals)) in &groups {
        if let Some(v) = vals.get(&metric) {
            let pos: Vec<f64> = v.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
            if !pos.is_empty() {
                series.entry(label.clone()).or_default().push((*epoch, summarize(&pos)));
            }
        }
    }
    for s in series.values_mut() {
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all: Vec<&(f64, Summary)> = series.values().flatten().collect();
    if all.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}">no positive values of {}</text></svg>"#, ml, h / 2.0, metric);
        return svg;
    }
    let x_max = all.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-12);
    let lo = all.iter().map(|p| p.1.min.log10()).fold(f64::INFINITY, f64::min).floor();
    let mut hi = all.iter().map(|p| p.1.max.log10()).fold(f64::NEG_INFINITY, f64::max).ceil();
    if hi <= lo {
        hi = lo + 1.0;
    }
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + pw * x / x_max;
    let sy = |v: f64| mt + ph * (hi - v.log10()) / (hi - lo);
    let _ = writeln!(svg, r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
    let mut d = lo;
    while d <= hi {
        let y = sy(10f64.powf(d));
        let _ = writeln!(svg, r##"<line x1="{ml}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, ml + pw);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, ml - 6.0, y + 4.0);
        d += ((hi - lo) / 8.0).ceil().max(1.0);
    }
    for k in 0..=4 {
        let x = x_max * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            mt + ph + 18.0,
            trim_num(x)
        );
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#, ml + pw / 2.0, h - 10.0);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{metric}</text>"#, ml, mt - 10.0);
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut band = String::new();
        for (x, s) in pts {
            let _ = write!(band, "{:.2},{:.2} ", sx(*x), sy(s.max));
        }
        for (x, s) in pts.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(*x), sy(s.min));
        }
        let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = pts
            .iter()
            .map(|(x, s)| format!("{:.2},{:.2}", sx(*x), sy(s.mean.max(s.min))))
            .collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let ly = mt + 16.0 * (k as f64 + 1.0);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ml + pw + 10.0,
            ml + pw + 30.0,
            ml + pw + 35.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn trim_num(x: f64) -> String {
    if x == x.round() {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Rate fits of `metric` for every (method, seed) trajectory in a CSV file.
pub fn fit_csv(path: &Path, metric: Metric) -> Result<Vec<(String, u64, RateModel)>> {
    let rows = read_trajectory_csv(path)?;
    let mut groups: BTreeMap<(String, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.get(metric.name()) {
            let e = groups.entry((r.method.clone(), r.seed)).or_default();
            e.0.push(r.iter as f64);
            e.1.push(v);
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument(format!("metric {metric} not found in {}", path.display())));
    }
    groups
        .into_iter()
        .map(|((m, s), (it, v))| diagnostics::rate_fit(&it, &v, None).map(|r| (m, s, r)))
        .collect()
}

/// Outcome of one named property over all checked instances.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyOutcome {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    /// Smallest (most negative) slack seen; identities report the negated error.
    pub worst_slack: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub property: String,
    pub iteration: u64,
    pub detail: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PropertyReport {
    pub outcomes: Vec<PropertyOutcome>,
    pub warnings: Vec<String>,
    pub first_violation: Option<Violation>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.failures == 0)
    }

    fn outcome(&mut self, name: &str) -> &mut PropertyOutcome {
        if let Some(i) = self.outcomes.iter().position(|o| o.name == name) {
            return &mut self.outcomes[i];
        }
        self.outcomes.push(PropertyOutcome {
            name: name.to_string(),
            checked: 0,
            failures: 0,
            worst_slack: f64::INFINITY,
            skipped: false,
        });
        self.outcomes.last_mut().unwrap()
    }

    fn skip(&mut self, name: &str) {
        self.outcome(name).skipped = true;
    }

    /// Records one check; `slack < 0` is a violation.
    fn record(&mut self, name: &str, slack: f64, iteration: u64, detail: impl FnOnce() -> String, state: Option<(&[f64], &[f64])>) {
        let o = self.outcome(name);
        o.checked += 1;
        o.worst_slack = o.worst_slack.min(slack);
        let failed = !(slack >= 0.0);
        if failed {
            o.failures += 1;
            if self.first_violation.is_none() {
                let (x, y) = state.map(|(x, y)| (x.to_vec(), y.to_vec())).unwrap_or_default();
                self.first_violation = Some(Violation {
                    property: name.to_string(),
                    iteration,
                    detail: detail(),
                    x,
                    y,
                });
            }
        }
    }

    /// Merges another report into this one.
    pub fn merge(&mut self, other: PropertyReport) {
        for o in other.outcomes {
            let mine = self.outcome(&o.name);
            mine.checked += o.checked;
            mine.failures += o.failures;
            mine.worst_slack = mine.worst_slack.min(o.worst_slack);
            mine.skipped |= o.skipped;
        }
        self.warnings.extend(other.warnings);
        if self.first_violation.is_none() {
            self.first_violation = other.first_violation;
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            let status = if o.skipped && o.checked == 0 {
                "skipped"
            } else if o.failures == 0 {
                "pass"
            } else {
                "FAIL"
            };
            let _ = writeln!(
                s,
                "{:<28} {:>7} checked {:>5} failed  worst slack {:+.3e}  {status}",
                o.name, o.checked, o.failures, o.worst_slack
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        if let Some(v) = &self.first_violation {
            let _ = writeln!(s, "first violation: {} at iteration {}: {}", v.property, v.iteration, v.detail);
            let _ = writeln!(s, "  x = {:?}", v.x);
            let _ = writeln!(s, "  y = {:?}", v.y);
        }
        s
    }
}

/// Tolerance scaled by the magnitude of the compared quantities.
fn scaled_tol(tol: f64, a: f64, b: f64) -> f64 {
    tol * 1f64.max(a.abs()).max(b.abs())
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A random dual point inside `dom f*` (a conjugate prox of a random vector).
fn random_dual_point(problem: &SaddleProblem, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let v = random_vec(rng, problem.dual_dim(), 1.0);
    problem.f.conj_prox(&v, &vec![1.0; problem.f.len()])
}

/// Dual vector supported on one random block.
fn random_block_vec(problem: &SaddleProblem, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; problem.dual_dim()];
    let i = rng.gen_range(0..problem.n_blocks());
    for r in problem.a.block_rows(i) {
        v[r] = scale * rng.sample::<f64, _>(StandardNormal);
    }
    v
}

/// Moreau identity, prox optimality and Fenchel–Young equality at prox pairs
/// for one function on random inputs.
pub fn function_suite(
    f: &ProxableFunction,
    dim: usize,
    rng: &mut ChaCha8Rng,
    count: usize,
    tol: f64,
    report: &mut PropertyReport,
    label: &str,
) -> Result<()> {
    for _ in 0..count {
        let v = random_vec(rng, dim, 3.0);
        let t = 10f64.powf(rng.gen_range(-3.0..3.0));
        // v = prox_{t f}(v) + t·prox_{f*/t}(v/t)
        let p = f.prox(&v, t)?;
        let scaled: Vec<f64> = v.iter().map(|a| a / t).collect();
        let q = f.conj_prox(&scaled, 1.0 / t)?;
        let err = v
            .iter()
            .zip(&p)
            .zip(&q)
            .map(|((a, b), c)| (a - b - t * c).abs())
            .fold(0.0, f64::max);
        let scale = 1.0 + linalg::norm_inf(&v);
        report.record(&format!("moreau[{label}]"), tol * scale - err, 0, || format!("error {err:e} at t = {t}"), None);
        // (v − p)/t ∈ ∂f(p)
        let u: Vec<f64> = v.iter().zip(&p).map(|(a, b)| (a - b) / t).collect();
        let d = f.subdiff_dist(&p, &u)?;
        let uscale = 1.0 + linalg::norm_inf(&u);
        report.record(&format!("prox_optimality[{label}]"), tol * uscale - d, 0, || format!("distance {d:e} at t = {t}"), None);
        // f(p) + f*(q) = ⟨p, q⟩; q rather than u since rounding can push u out of dom f*
        let lhs = f.value(&p) + f.conj_value(&q);
        let rhs = linalg::dot(&p, &q);
        let gap = (lhs - rhs).abs();
        report.record(
            &format!("fenchel_young[{label}]"),
            scaled_tol(tol, lhs, rhs) * uscale * (1.0 + linalg::norm_inf(&p)) - gap,
            0,
            || format!("f(p) + f*(u) = {lhs}, <p,u> = {rhs}"),
            None,
        );
    }
    Ok(())
}

/// Lower bounds on `V` and `V_k` for random inputs with single-block dual differences.
pub fn lyapunov_bound_suite(
    problem: &SaddleProblem,
    steps: &StepSizes,
    probs: &[f64],
    rng: &mut ChaCha8Rng,
    count: usize,
    tol: f64,
    report: &mut PropertyReport,
) -> Result<()> {
    for _ in 0..count {
        let dx = random_vec(rng, problem.primal_dim(), 1.0);
        let dy = random_block_vec(problem, rng, 1.0);
        let v = diagnostics::lyapunov_v(problem, steps, probs, &dx, &dy)?;
        let lo = diagnostics::lyapunov_v_lower(problem, steps, probs, &dx, &dy);
        report.record("v_lower_bound", v - lo + scaled_tol(tol, v, lo), 0, || format!("V = {v}, bound = {lo}"), None);
        let y = random_vec(rng, problem.dual_dim(), 1.0);
        let ydiff = random_block_vec(problem, rng, 1.0);
        let vk = diagnostics::lyapunov_vk(problem, steps, probs, &dx, &y, &ydiff)?;
        let lo = diagnostics::lyapunov_vk_lower(problem, steps, probs, &dx, &y, &ydiff);
        report.record("vk_lower_bound", vk - lo + scaled_tol(tol, vk, lo), 0, || format!("V_k = {vk}, bound = {lo}"), None);
    }
    Ok(())
}

/// Approximate saddle point used as a test point (accuracy is irrelevant:
/// the one-step inequality holds for every `z`).
fn approximate_saddle(problem: &SaddleProblem, iters: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(r) = &problem.reference {
        return Ok((r.x_star.clone(), r.y_star.clone()));
    }
    let out = solver::pdhg_run(problem, None, DEFAULT_GAMMA, &RunConfig::new(iters, iters.max(1)))?;
    Ok((out.state.x, out.state.y))
}

/// Runs SPDHG with the probe enabled and checks, per iteration, the one-step
/// inequality at `z*` and random `z`, the Lyapunov lower bounds along the
/// trajectory, and the sampler identities; then the Lyapunov bounds on
/// random inputs and the function suites of `g` and every `f_i`.
pub fn check_problem(
    problem: &SaddleProblem,
    gamma: f64,
    seed: u64,
    check: &CheckConfig,
    probs: Option<Vec<f64>>,
) -> Result<PropertyReport> {
    let mut report = PropertyReport::default();
    let n = problem.n_blocks();
    if n > 8 {
        return Err(Error::InvalidArgument(format!(
            "property checks enumerate every block; need n <= 8, got {n}"
        )));
    }
    let sampler = match probs {
        Some(p) => SamplerSpec::new(p, seed)?,
        None => SamplerSpec::uniform(n, seed),
    };
    let base = solver::default_step_sizes(&problem.a, gamma, &sampler)?;
    let steps = base.scaled_tau(check.tau_scale);
    let step_report = solver::validate_step_sizes(&steps, &problem.a, &sampler)?;
    let bounds_valid = step_report.passed;
    if !bounds_valid {
        report.warnings.push(format!(
            "step sizes violate the step condition (max ratio {:.3}); Lyapunov lower bounds skipped",
            step_report.max_ratio
        ));
        report.skip("v_lower_bound");
        report.skip("vk_lower_bound");
    }
    let probs = sampler.probs().to_vec();
    let (x_star, y_star) = approximate_saddle(problem, 20_000)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let test_points: Vec<(Vec<f64>, Vec<f64>)> = std::iter::once(Ok((x_star.clone(), y_star.clone())))
        .chain((0..check.random_points).map(|_| {
            let x = random_vec(&mut rng, problem.primal_dim(), 1.0);
            random_dual_point(problem, &mut rng).map(|y| (x, y))
        }))
        .collect::<Result<_>>()?;

    let mut state = SolverState::zeros(problem);
    for _ in 0..check.iterations {
        let probe = match solver::spdhg_step_probed(&mut state, problem, &steps, &sampler) {
            Ok(p) => p,
            Err(Error::Divergence { iter }) if !bounds_valid => {
                report.warnings.push(format!("iterates diverged at iteration {iter} (expected with invalid steps)"));
                break;
            }
            Err(e) => return Err(e),
        };
        let k = state.k;
        let dump = (probe.x.as_slice(), probe.y.as_slice());
        for (j, (x, y)) in test_points.iter().enumerate() {
            let c = diagnostics::descent_inequality(problem, &steps, &probs, &probe, x, y)?;
            if !c.lhs.is_finite() || !c.rhs.is_finite() {
                if bounds_valid {
                    report.record("descent", -1.0, k, || format!("non-finite terms {c:?}"), Some(dump));
                }
                continue;
            }
            let which = if j == 0 { "z*" } else { "random z" };
            report.record(
                "descent",
                c.slack() + scaled_tol(check.tol, c.lhs, c.rhs),
                k,
                || format!("at {which}: lhs {} > rhs {}", c.lhs, c.rhs),
                Some(dump),
            );
        }
        if bounds_valid {
            let dx = linalg::sub(&probe.x, &probe.x_prev);
            let dy = linalg::sub(&probe.y, &probe.y_prev);
            let v = diagnostics::lyapunov_v(problem, &steps, &probs, &dx, &dy)?;
            let lo = diagnostics::lyapunov_v_lower(problem, &steps, &probs, &dx, &dy);
            report.record("v_lower_bound", v - lo + scaled_tol(check.tol, v, lo), k, || format!("V = {v} < {lo}"), Some(dump));
            let ddx = linalg::sub(&probe.x_prev, &x_star);
            let ddy = linalg::sub(&probe.y, &y_star);
            let vk = diagnostics::lyapunov_vk(problem, &steps, &probs, &ddx, &ddy, &dy)?;
            let lo = diagnostics::lyapunov_vk_lower(problem, &steps, &probs, &ddx, &ddy, &dy);
            report.record("vk_lower_bound", vk - lo + scaled_tol(check.tol, vk, lo), k, || format!("V_k = {vk} < {lo}"), Some(dump));
        }
        let snap = DualUpdateSnapshot {
            offsets: problem.a.block_offsets(),
            probs: &probs,
            sigma: steps.sigma(),
            y_current: &probe.y,
            y_candidate: Some(&probe.y_hat),
        };
        let test_y = &test_points[1.min(test_points.len() - 1)].1;
        let exact = sampling::check_expectation_identities(&snap, test_y, &y_star, ExpectationMode::Exact)?;
        for c in &exact.checks {
            report.record(
                &format!("identity_exact[{}]", c.name),
                sampling::IDENTITY_TOL - c.error,
                k,
                || format!("lhs {} rhs {} rel err {:e}", c.lhs, c.rhs, c.error),
                Some(dump),
            );
        }
        if check.mc_draws > 0 && k == check.iterations {
            let mc = sampling::check_expectation_identities(
                &snap,
                test_y,
                &y_star,
                ExpectationMode::MonteCarlo {
                    draws: check.mc_draws,
                    seed: seed.wrapping_add(k),
                },
            )?;
            for c in &mc.checks {
                report.record(
                    &format!("identity_mc[{}]", c.name),
                    if c.passed { 3.0 - c.error } else { -c.error },
                    k,
                    || format!("lhs {} rhs {} ({:.2} standard errors)", c.lhs, c.rhs, c.error),
                    Some(dump),
                );
            }
        }
    }

    if bounds_valid {
        lyapunov_bound_suite(problem, &steps, &probs, &mut rng, check.random_inputs, check.tol, &mut report)?;
    }
    function_suite(&problem.g, problem.primal_dim(), &mut rng, 20, check.tol, &mut report, "g")?;
    for (i, f) in problem.f.pieces().iter().enumerate() {
        let dim = problem.f.piece_range(i).len();
        function_suite(f, dim, &mut rng, 5, check.tol, &mut report, "f_i")?;
    }
    Ok(report)
}

/// The property suite for the problem of `config`, once per seed.
pub fn check_properties(config: &ExperimentConfig) -> Result<PropertyReport> {
    let instance = build_instance(config)?;
    let solver_cfg = config
        .solvers
        .iter()
        .find(|s| s.method == Method::Spdhg)
        .cloned()
        .unwrap_or_else(|| SolverConfig::new(Method::Spdhg));
    let mut report = PropertyReport::default();
    for &seed in &config.seeds {
        let r = check_problem(&instance.problem, solver_cfg.gamma, seed, &config.check, solver_cfg.overrides.probs.clone())?;
        report.merge(r);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BP_TOML: &str = r#"
seeds = [1, 2]
max_epochs = 3
log_every_epochs = 1
metrics = ["kkt_residual", "feasibility"]

[problem]
kind = "basis_pursuit"
n = 6
p = 10
sparsity = 2
seed = 4

[[solvers]]
method = "spdhg"

[[solvers]]
method = "pdhg"
"#;

    #[test]
    fn config_parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(BP_TOML).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.solvers.len(), 2);
        assert!(matches!(cfg.problem, ProblemSource::Generated(_)));
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ExperimentConfig::from_toml(&BP_TOML.replace("seeds = [1, 2]", "seeds = []")).is_err());
        let bad_gamma = BP_TOML.replace("method = \"pdhg\"", "method = \"pdhg\"\ngamma = 1.0");
        assert!(ExperimentConfig::from_toml(&bad_gamma).is_err());
        let dup = BP_TOML.replace("method = \"pdhg\"", "method = \"spdhg\"");
        assert!(ExperimentConfig::from_toml(&dup).is_err());
        assert!(ExperimentConfig::from_toml(&BP_TOML.replace("kkt_residual", "kkt")).is_err());
    }

    #[test]
    fn file_problem_source() {
        let cfg = ExperimentConfig::from_toml(
            r#"
[problem]
file = "data.svm"
kind = "lasso"
lambda = 0.5
"#,
        )
        .unwrap();
        assert!(matches!(cfg.problem, ProblemSource::File(_)));
    }

    #[test]
    fn zero_epoch_run_writes_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::from_toml(BP_TOML).unwrap();
        cfg.max_epochs = 0.0;
        cfg.solvers.truncate(1);
        cfg.seeds = vec![0];
        cfg.output_dir = dir.path().to_path_buf();
        let out = run_experiment(&cfg).unwrap();
        assert!(out.trajectories[0].log.is_empty());
        assert!(dir.path().join("run.json").exists());
        assert!(dir.path().join("plot.svg").exists());
        let rows = read_trajectory_csv(&dir.path().join("spdhg_seed0.csv")).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let t = Trajectory {
            label: "spdhg".into(),
            method: Method::Spdhg,
            seed: 3,
            log: vec![
                ConvergenceRecord {
                    iter: 5,
                    epoch: 1.0 / 3.0,
                    values: vec![(Metric::KktResidual, 0.1 + 0.2), (Metric::DistToRef, 1e-300)],
                },
                ConvergenceRecord {
                    iter: 10,
                    epoch: 2.0 / 3.0,
                    values: vec![(Metric::KktResidual, std::f64::consts::PI), (Metric::DistToRef, 5e-324)],
                },
            ],
            error: None,
        };
        let path = dir.path().join("t.csv");
        write_trajectory_csv(&path, &t).unwrap();
        let rows = read_trajectory_csv(&path).unwrap();
        for (r, rec) in rows.iter().zip(&t.log) {
            assert_eq!(r.iter, rec.iter);
            assert_eq!(r.epoch.to_bits(), rec.epoch.to_bits());
            for (m, v) in &rec.values {
                assert_eq!(r.get(m.name()).unwrap().to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((s.min, s.max, s.count), (1.0, 4.0, 4));
        assert_eq!(summarize(&[7.0]).std, 0.0);
    }

    #[test]
    fn svg_is_well_formed_text() {
        let t = Trajectory {
            label: "a<b".into(),
            method: Method::Spdhg,
            seed: 0,
            log: (1..5)
                .map(|k| ConvergenceRecord {
                    iter: k,
                    epoch: k as f64,
                    values: vec![(Metric::KktResidual, 10f64.powi(-(k as i32)))],
                })
                .collect(),
            error: None,
        };
        let svg = render_svg(&[t], Some(Metric::KktResidual));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("<polyline"));
    }
}
