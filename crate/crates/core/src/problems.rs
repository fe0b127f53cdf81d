//! Synthetic instances and LIBSVM ingestion.
//!
//! Every generator first produces a [`Dataset`] (sparse rows plus one target
//! per row) and then assembles a [`SaddleProblem`] from it, so generated and
//! loaded data go through the same path.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcs::{ProxableFunction, SeparableSum};
use crate::linalg;
use crate::linops::BlockLinearOperator;
use crate::solver::SaddleProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `min ‖x‖₁ s.t. Ax = b`.
    BasisPursuit,
    /// `½‖Ax − b‖² + λ‖x‖₁`.
    Lasso,
    /// `½‖Ax − b‖² + (λ/2)‖x‖²`.
    Ridge,
    /// `(1/n) Σ max(0, 1 − b_i⟨a_i, x⟩) + (λ/2)‖x‖²`.
    SvmHinge,
}

fn default_rho() -> f64 {
    0.5
}
fn default_noise() -> f64 {
    0.1
}
fn default_margin() -> f64 {
    1.0
}
fn default_block() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: ProblemKind,
    /// Rows (samples).
    pub n: usize,
    /// Features.
    pub p: usize,
    /// AR(1) correlation of the features, in `[0, 1)`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Nonzeros in the planted solution.
    #[serde(default)]
    pub sparsity: usize,
    #[serde(default)]
    pub lambda: f64,
    /// When set, `λ = lambda_rel · ‖A^T b‖_∞` (overrides `lambda`).
    #[serde(default)]
    pub lambda_rel: Option<f64>,
    /// Standard deviation of the regression noise (0.1, i.e. variance 0.01).
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Distance of the SVM cluster means from the origin.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Rows per dual block.
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: ProblemKind, n: usize, p: usize) -> Self {
        Self {
            kind,
            n,
            p,
            rho: default_rho(),
            sparsity: 0,
            lambda: 0.0,
            lambda_rel: None,
            noise_std: default_noise(),
            margin: default_margin(),
            block_size: 1,
            seed: 0,
        }
    }

    /// Desk-scale basis pursuit: `n = 100`, `p = 200`, `ρ = 0.5`, 20 nonzeros.
    pub fn basis_pursuit_desk(seed: u64) -> Self {
        Self {
            sparsity: 20,
            seed,
            ..Self::new(ProblemKind::BasisPursuit, 100, 200)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidArgument("n and p must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.sparsity > self.p {
            return Err(Error::InvalidArgument(format!(
                "sparsity {} exceeds dimension {}",
                self.sparsity, self.p
            )));
        }
        if !(self.lambda >= 0.0) || self.lambda_rel.is_some_and(|l| !(l >= 0.0)) {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        if self.block_size == 0 {
            return Err(Error::InvalidArgument("block_size must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sparse rows with one target (label or right-hand side) per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub p: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn operator(&self) -> Result<BlockLinearOperator> {
        BlockLinearOperator::from_sparse_rows(self.p, &self.rows)
    }
}

/// A generated instance.
#[derive(Debug, Clone)]
pub struct Generated {
    pub problem: SaddleProblem,
    pub data: Dataset,
    /// Planted coefficients (feasible for basis pursuit).
    pub x_planted: Option<Vec<f64>>,
    /// Regularisation actually used.
    pub lambda: f64,
}

/// Lower Cholesky factor of `Σ_ij = ρ^|i−j|`.
fn ar1_cholesky(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let sigma = DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()));
    sigma
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("AR(1) covariance is not positive definite".into()))
}

/// One `N(0, Σ)` row, redrawn in the (measure-zero) event that it is all zeros.
fn gaussian_row(l: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = l.nrows();
    loop {
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let row: Vec<f64> = (0..p)
            .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
            .collect();
        if row.iter().any(|v| *v != 0.0) {
            return row;
        }
    }
}

fn to_sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j, *v))
        .collect()
}

fn planted(p: usize, sparsity: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; p];
    for j in index::sample(rng, p, sparsity).into_iter() {
        x[j] = rng.sample(StandardNormal);
    }
    x
}

/// Rows of `A` i.i.d. `N(0, Σ)`, a planted sparse `x` with `N(0, 1)` nonzeros
/// and `b = A x` computed through the operator itself, so `A x_planted = b`
/// holds exactly.
pub fn gen_basis_pursuit(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = ar1_cholesky(spec.p, spec.rho)?;
    let rows: Vec<Vec<(usize, f64)>> = (0..spec.n).map(|_| to_sparse(&gaussian_row(&l, &mut rng))).collect();
    let x = planted(spec.p, spec.sparsity, &mut rng);
    let a = BlockLinearOperator::from_sparse_rows(spec.p, &rows)?;
    let b = a.full_apply(&x)?;
    let data = Dataset { p: spec.p, rows, targets: b };
    let problem = assemble(ProblemKind::BasisPursuit, &data, 0.0, spec.block_size)?;
    Ok(Generated {
        problem,
        data,
        x_planted: Some(x),
        lambda: 0.0,
    })
}

/// Lasso or ridge regression with `b = A x_planted + noise`.
pub fn gen_regression(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    if !matches!(spec.kind, ProblemKind::Lasso | ProblemKind::Ridge) {
        return Err(Error::InvalidArgument("gen_regression needs kind lasso or ridge".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = ar1_cholesky(spec.p, spec.rho)?;
    let rows: Vec<Vec<(usize, f64)>> = (0..spec.n).map(|_| to_sparse(&gaussian_row(&l, &mut rng))).collect();
    let sparsity = if spec.sparsity == 0 { spec.p } else { spec.sparsity };
    let x = planted(spec.p, sparsity, &mut rng);
    let a = BlockLinearOperator::from_sparse_rows(spec.p, &rows)?;
    let mut b = a.full_apply(&x)?;
    for bi in b.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *bi += spec.noise_std * e;
    }
    let data = Dataset { p: spec.p, rows, targets: b };
    let lambda = resolve_lambda(spec, &data)?;
    if spec.kind == ProblemKind::Ridge && lambda <= 0.0 {
        return Err(Error::InvalidArgument("ridge needs lambda > 0".into()));
    }
    let problem = assemble(spec.kind, &data, lambda, spec.block_size)?;
    Ok(Generated {
        problem,
        data,
        x_planted: Some(x),
        lambda,
    })
}

/// `λ`, either absolute or relative to `‖A^T b‖_∞`.
pub fn resolve_lambda(spec: &GeneratorSpec, data: &Dataset) -> Result<f64> {
    match spec.lambda_rel {
        Some(rel) => {
            let atb = data.operator()?.full_adjoint(&data.targets)?;
            Ok(rel * linalg::norm_inf(&atb))
        }
        None => Ok(spec.lambda),
    }
}

/// Two Gaussian clusters at `±margin·u` (`u` the normalised all-ones
/// direction) with AR(1) noise; labels are fair coin flips.
pub fn gen_svm(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = ar1_cholesky(spec.p, spec.rho)?;
    let shift = spec.margin / (spec.p as f64).sqrt();
    let mut rows = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let label = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        loop {
            let mut row = gaussian_row(&l, &mut rng);
            row.iter_mut().for_each(|v| *v += label * shift);
            if row.iter().any(|v| *v != 0.0) {
                rows.push(to_sparse(&row));
                break;
            }
        }
        labels.push(label);
    }
    let data = Dataset {
        p: spec.p,
        rows,
        targets: labels,
    };
    let lambda = resolve_lambda(spec, &data)?;
    let problem = assemble(ProblemKind::SvmHinge, &data, lambda, spec.block_size)?;
    Ok(Generated {
        problem,
        data,
        x_planted: None,
        lambda,
    })
}

/// Dispatches on `spec.kind`.
pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    match spec.kind {
        ProblemKind::BasisPursuit => gen_basis_pursuit(spec),
        ProblemKind::Lasso | ProblemKind::Ridge => gen_regression(spec),
        ProblemKind::SvmHinge => gen_svm(spec),
    }
}

/// Builds the saddle problem of `kind` over `data`, one dual block per
/// `block_size` consecutive rows.
pub fn assemble(kind: ProblemKind, data: &Dataset, lambda: f64, block_size: usize) -> Result<SaddleProblem> {
    if data.targets.len() != data.n() {
        return Err(Error::dim("targets", data.n(), data.targets.len()));
    }
    let n = data.n();
    let dims = vec![1; n];
    let (g, pieces, a) = match kind {
        ProblemKind::BasisPursuit => (
            ProxableFunction::l1(1.0)?,
            data.targets.iter().map(|&b| ProxableFunction::indicator_point(vec![b])).collect(),
            data.operator()?,
        ),
        ProblemKind::Lasso => (
            ProxableFunction::l1(lambda)?,
            data.targets.iter().map(|&b| ProxableFunction::least_squares(vec![b])).collect(),
            data.operator()?,
        ),
        ProblemKind::Ridge => (
            ProxableFunction::squared_l2(lambda)?,
            data.targets.iter().map(|&b| ProxableFunction::least_squares(vec![b])).collect(),
            data.operator()?,
        ),
        ProblemKind::SvmHinge => {
            if lambda <= 0.0 {
                return Err(Error::InvalidArgument("SVM needs lambda > 0".into()));
            }
            if let Some(bad) = data.targets.iter().find(|t| **t != 1.0 && **t != -1.0) {
                return Err(Error::InvalidArgument(format!("SVM labels must be ±1, got {bad}")));
            }
            let c = 1.0 / n as f64;
            let a = data.operator()?.scale_rows(&data.targets)?;
            (
                ProxableFunction::squared_l2(lambda)?,
                (0..n).map(|_| ProxableFunction::hinge(c, 1.0)).collect::<Result<Vec<_>>>()?,
                a,
            )
        }
    };
    let a = if block_size > 1 { a.grouped_by(block_size)? } else { a };
    SaddleProblem::new(g, SeparableSum::new(pieces, &dims)?, a)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Feature dimension; defaults to the largest index seen.
    pub p_override: Option<usize>,
    /// Scale every nonzero row to unit Euclidean norm.
    pub normalize: bool,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads `label idx:val idx:val ...` lines with 1-based indices.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_libsvm(path: &Path, options: LoadOptions) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    parse_libsvm(reader, path, options)
}

pub fn parse_libsvm(reader: impl BufRead, path: &Path, options: LoadOptions) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut max_idx = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label `{label_tok}`")))?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno, format!("expected index:value, got `{tok}`")))?;
            let idx: usize = i
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad index `{i}`")))?;
            if idx == 0 {
                return Err(parse_err(path, lineno, "indices are 1-based"));
            }
            let val: f64 = v
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value `{v}`")))?;
            if !val.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite value `{v}`")));
            }
            max_idx = max_idx.max(idx);
            row.push((idx - 1, val));
        }
        row.sort_by_key(|e| e.0);
        if row.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(parse_err(path, lineno, "duplicate feature index"));
        }
        row.retain(|e| e.1 != 0.0);
        if options.normalize {
            let nrm = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if nrm > 0.0 {
                row.iter_mut().for_each(|e| e.1 /= nrm);
            }
        }
        rows.push(row);
        targets.push(label);
    }
    let p = match options.p_override {
        Some(p) if p < max_idx => {
            return Err(Error::InvalidArgument(format!(
                "feature index {max_idx} exceeds the requested dimension {p}"
            )))
        }
        Some(p) => p,
        None => max_idx,
    };
    Ok(Dataset { p, rows, targets })
}

/// Writes `data` in LIBSVM format; values use the shortest round-trip
/// representation so a reload is bit-identical.
pub fn write_libsvm(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (row, t) in data.rows.iter().zip(&data.targets) {
        write!(w, "{t}")?;
        for (j, v) in row {
            write!(w, " {}:{v}", j + 1)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
