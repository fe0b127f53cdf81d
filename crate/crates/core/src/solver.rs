//! SPDHG and its relatives.
//!
//! One SPDHG iteration, with `x` the latest primal iterate and
//! `aty_bar = A^T ȳ^k`:
//!
//! ```text
//!     x^k       = prox_{τ g}(x^{k-1} − τ A^T ȳ^k)
//!     draw i with probability p_i
//!     y_i^{k+1} = prox_{σ_i f_i*}(y_i^k + σ_i A_i x^k),   other blocks unchanged
//!     ȳ^{k+1}   = y^{k+1} + P^{-1}(y^{k+1} − y^k)
//! ```
//!
//! `ȳ` is never stored; only `A^T y` and `A^T ȳ` are kept, updated in
//! `O(nnz(A_i))` per iteration and recomputed from scratch once per epoch.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, ConvergenceRecord, Metric};
use crate::error::{Error, Result};
use crate::funcs::{FunctionKind, ProxableFunction, SeparableSum, Step};
use crate::linalg;
use crate::linops::BlockLinearOperator;
use crate::sampling::SamplerSpec;

/// Slack allowed on the step-size ratio before it counts as a violation.
pub const STEP_RATIO_SLACK: f64 = 1e-12;

/// Default `γ`, used for every problem in the reference experiments.
pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    tau: f64,
    sigma: Vec<f64>,
    gamma: f64,
}

impl StepSizes {
    /// Validated step sizes; fails unless `p_i^-1 τ σ_i ‖A_i‖² ≤ γ² < 1` for every block.
    pub fn new(
        tau: f64,
        sigma: Vec<f64>,
        gamma: f64,
        a: &BlockLinearOperator,
        sampler: &SamplerSpec,
    ) -> Result<Self> {
        let steps = Self::unchecked(tau, sigma, gamma)?;
        let report = validate_step_sizes(&steps, a, sampler)?;
        if !report.gamma_valid {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !report.passed {
            return Err(Error::StepSizeViolation {
                block: report.argmax,
                ratio: report.max_ratio,
            });
        }
        Ok(steps)
    }

    /// Step sizes without the step-condition check (positivity is still enforced).
    pub fn unchecked(tau: f64, sigma: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) || sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("step sizes must be positive and finite".into()));
        }
        Ok(Self { tau, sigma, gamma })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `C₁ = 1 − γ`.
    pub fn c1(&self) -> f64 {
        1.0 - self.gamma
    }

    pub fn scaled_tau(&self, factor: f64) -> Self {
        Self {
            tau: self.tau * factor,
            ..self.clone()
        }
    }
}

fn nonzero_norms(a: &BlockLinearOperator) -> Result<Vec<f64>> {
    let norms = a.block_norms();
    if let Some(block) = norms.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroBlockNorm { block });
    }
    Ok(norms)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

/// `τ = γ/(n·max_i‖A_i‖)` and, for uniform sampling, `σ_i = γ/‖A_i‖`.
///
/// With non-uniform probabilities `σ_i = γ² p_i/(τ‖A_i‖²)`, which meets the
/// step condition with equality on every block.
pub fn default_step_sizes(a: &BlockLinearOperator, gamma: f64, sampler: &SamplerSpec) -> Result<StepSizes> {
    check_gamma(gamma)?;
    if sampler.n() != a.n_blocks() {
        return Err(Error::dim("sampler blocks", a.n_blocks(), sampler.n()));
    }
    let norms = nonzero_norms(a)?;
    let n = norms.len() as f64;
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let tau = gamma / (n * max);
    let sigma = if sampler.is_uniform() {
        norms.iter().map(|l| gamma / l).collect()
    } else {
        norms
            .iter()
            .zip(sampler.probs())
            .map(|(l, p)| gamma * gamma * p / (tau * l * l))
            .collect()
    };
    StepSizes::unchecked(tau, sigma, gamma)
}

/// Step sizes of the randomized Vu–Condat coordinate-descent baseline:
/// `n² τ σ_i ‖A_i‖² ≤ γ²`, a factor `n` below the SPDHG rule under uniform sampling.
pub fn fb_vc_cd_step_sizes(a: &BlockLinearOperator, gamma: f64) -> Result<StepSizes> {
    check_gamma(gamma)?;
    let norms = nonzero_norms(a)?;
    let n = norms.len() as f64;
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let tau = gamma / (n * max);
    let sigma = norms.iter().map(|l| gamma / (n * l)).collect();
    StepSizes::unchecked(tau, sigma, gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// `p_i^-1 τ σ_i ‖A_i‖² / γ²` per block.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub argmax: usize,
    pub gamma_valid: bool,
    pub passed: bool,
}

pub fn validate_step_sizes(steps: &StepSizes, a: &BlockLinearOperator, sampler: &SamplerSpec) -> Result<StepReport> {
    if steps.sigma.len() != a.n_blocks() {
        return Err(Error::dim("dual step sizes", a.n_blocks(), steps.sigma.len()));
    }
    if sampler.n() != a.n_blocks() {
        return Err(Error::dim("sampler blocks", a.n_blocks(), sampler.n()));
    }
    let g2 = steps.gamma * steps.gamma;
    let ratios: Vec<f64> = (0..a.n_blocks())
        .map(|i| {
            let l = a.block_norm(i);
            steps.tau * steps.sigma[i] * l * l / (sampler.prob(i) * g2)
        })
        .collect();
    let (argmax, max_ratio) = ratios
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    let gamma_valid = steps.gamma > 0.0 && steps.gamma < 1.0;
    Ok(StepReport {
        passed: gamma_valid && max_ratio <= 1.0 + STEP_RATIO_SLACK,
        ratios,
        max_ratio,
        argmax,
        gamma_valid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub objective_star: f64,
    pub provenance: String,
    /// Euclidean KKT residual at certification time.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SaddleProblem {
    pub g: ProxableFunction,
    pub f: SeparableSum,
    pub a: BlockLinearOperator,
    b: Option<Vec<f64>>,
    pub reference: Option<ReferenceSolution>,
    block_pieces: Vec<Range<usize>>,
}

impl SaddleProblem {
    pub fn new(g: ProxableFunction, f: SeparableSum, a: BlockLinearOperator) -> Result<Self> {
        if f.dim() != a.dual_dim() {
            return Err(Error::dim("separable sum", a.dual_dim(), f.dim()));
        }
        if let Some(d) = g.fixed_dim() {
            if d != a.primal_dim() {
                return Err(Error::dim("g", a.primal_dim(), d));
            }
        }
        let block_pieces = (0..a.n_blocks())
            .map(|i| {
                f.pieces_covering(a.block_rows(i)).ok_or_else(|| {
                    Error::InvalidArgument(format!("operator block {i} splits a function piece"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let b = if f
            .pieces()
            .iter()
            .all(|p| matches!(p.kind(), FunctionKind::IndicatorPoint { .. }))
        {
            let mut b = Vec::with_capacity(f.dim());
            for p in f.pieces() {
                if let FunctionKind::IndicatorPoint { b: bi } = p.kind() {
                    b.extend_from_slice(bi);
                }
            }
            Some(b)
        } else {
            None
        };
        Ok(Self {
            g,
            f,
            a,
            b,
            reference: None,
            block_pieces,
        })
    }

    pub fn with_reference(mut self, reference: ReferenceSolution) -> Result<Self> {
        if reference.x_star.len() != self.primal_dim() {
            return Err(Error::dim("reference x", self.primal_dim(), reference.x_star.len()));
        }
        if reference.y_star.len() != self.dual_dim() {
            return Err(Error::dim("reference y", self.dual_dim(), reference.y_star.len()));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    /// Same problem with the operator rows regrouped.
    pub fn with_operator(&self, a: BlockLinearOperator) -> Result<Self> {
        let mut out = Self::new(self.g.clone(), self.f.clone(), a)?;
        out.reference = self.reference.clone();
        Ok(out)
    }

    /// The dual treated as a single block (deterministic PDHG).
    pub fn single_block(&self) -> Self {
        self.with_operator(self.a.single_block())
            .expect("a single block covers every piece")
    }

    pub fn n_blocks(&self) -> usize {
        self.a.n_blocks()
    }

    pub fn primal_dim(&self) -> usize {
        self.a.primal_dim()
    }

    pub fn dual_dim(&self) -> usize {
        self.a.dual_dim()
    }

    /// Constraint vector when `f = δ_b`.
    pub fn b(&self) -> Option<&[f64]> {
        self.b.as_deref()
    }

    pub fn is_constrained(&self) -> bool {
        self.b.is_some()
    }

    pub(crate) fn block_pieces(&self, i: usize) -> Range<usize> {
        self.block_pieces[i].clone()
    }

    /// `f(Ax) + g(x)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        match self.a.full_apply(x) {
            Ok(ax) => self.f.value(&ax) + self.g.value(x),
            Err(_) => f64::INFINITY,
        }
    }

    /// Conjugate prox of the pieces of block `i` with step `sigma`.
    #[inline]
    pub(crate) fn block_conj_prox(&self, i: usize, v: &[f64], sigma: f64, out: &mut [f64]) {
        self.f.conj_prox_pieces_into(self.block_pieces(i), v, sigma, out);
    }

    /// Full-dimensional dual candidate `ŷ_i = prox_{σ_i f_i*}(y_i + σ_i A_i x)` for all blocks.
    pub fn dual_candidate(&self, x: &[f64], y: &[f64], sigma: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dual_dim()];
        let mut v = Vec::new();
        for i in 0..self.n_blocks() {
            let rows = self.a.block_rows(i);
            v.resize(rows.len(), 0.0);
            self.a.block_apply_into(i, x, &mut v);
            for (vj, yj) in v.iter_mut().zip(&y[rows.clone()]) {
                *vj = yj + sigma[i] * *vj;
            }
            self.block_conj_prox(i, &v, sigma[i], &mut out[rows]);
        }
        out
    }
}

/// Running sums for `x_av^K = (1/K)Σ_{k=1}^K x^k` and `y_av^{K+1} = (1/K)Σ_{k=1}^K y^{k+1}`.
///
/// The dual sum is accumulated lazily: a block is only folded in when it
/// changes, keeping the per-iteration cost at `O(p + m_i)`.
#[derive(Debug, Clone)]
pub struct ErgodicAccumulator {
    sum_x: Vec<f64>,
    flushed_y: Vec<f64>,
    block_mark: Vec<u64>,
    offsets: Vec<usize>,
    count: u64,
}

impl ErgodicAccumulator {
    pub fn new(p: usize, offsets: &[usize]) -> Self {
        Self {
            sum_x: vec![0.0; p],
            flushed_y: vec![0.0; *offsets.last().unwrap()],
            block_mark: vec![0; offsets.len() - 1],
            offsets: offsets.to_vec(),
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Folds the current value of block `i` in before it is overwritten.
    fn flush_block(&mut self, i: usize, y_block: &[f64]) {
        let reps = (self.count - self.block_mark[i]) as f64;
        if reps > 0.0 {
            let r = self.offsets[i]..self.offsets[i + 1];
            linalg::axpy(reps, y_block, &mut self.flushed_y[r]);
        }
        self.block_mark[i] = self.count;
    }

    fn record(&mut self, x: &[f64]) {
        linalg::axpy(1.0, x, &mut self.sum_x);
        self.count += 1;
    }

    pub fn sum_x(&self) -> &[f64] {
        &self.sum_x
    }

    pub fn average_x(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| self.sum_x.iter().map(|s| s / self.count as f64).collect())
    }

    /// Dual average given the current dual iterate.
    pub fn average_y(&self, y: &[f64]) -> Option<Vec<f64>> {
        if self.count == 0 {
            return None;
        }
        let k = self.count as f64;
        let mut out = self.flushed_y.clone();
        for i in 0..self.block_mark.len() {
            let reps = (self.count - self.block_mark[i]) as f64;
            for r in self.offsets[i]..self.offsets[i + 1] {
                out[r] = (out[r] + reps * y[r]) / k;
            }
        }
        Some(out)
    }
}

/// Previous values of the dual block changed by the last iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockUpdate {
    pub block: usize,
    pub previous: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    /// Latest primal iterate.
    pub x: Vec<f64>,
    /// Primal iterate before the latest one.
    pub x_prev: Vec<f64>,
    /// Latest dual iterate.
    pub y: Vec<f64>,
    /// `y^{k} − y^{k−1}` lives on a single block; its old values are kept here.
    pub last_update: Option<BlockUpdate>,
    pub aty: Vec<f64>,
    pub aty_bar: Vec<f64>,
    /// Completed iterations.
    pub k: u64,
    pub ergodic: ErgodicAccumulator,
    pub rng_counter: u64,
    /// Largest relative drift of the cached `A^T y` seen at a resync.
    pub max_drift: f64,
    /// Starting point, kept as the smoothed-gap anchor.
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    extrapolation: f64,
}

impl SolverState {
    /// `x^0`, `y^0 = y^1 = ȳ^1`.
    pub fn new(problem: &SaddleProblem, x0: Vec<f64>, y0: Vec<f64>) -> Result<Self> {
        if x0.len() != problem.primal_dim() {
            return Err(Error::dim("x0", problem.primal_dim(), x0.len()));
        }
        if y0.len() != problem.dual_dim() {
            return Err(Error::dim("y0", problem.dual_dim(), y0.len()));
        }
        let aty = problem.a.full_adjoint(&y0)?;
        Ok(Self {
            x_prev: x0.clone(),
            x: x0.clone(),
            y: y0.clone(),
            x0,
            y0,
            last_update: None,
            aty_bar: aty.clone(),
            aty,
            k: 0,
            ergodic: ErgodicAccumulator::new(problem.primal_dim(), problem.a.block_offsets()),
            rng_counter: 0,
            max_drift: 0.0,
            extrapolation: 1.0,
        })
    }

    pub fn zeros(problem: &SaddleProblem) -> Self {
        Self::new(problem, vec![0.0; problem.primal_dim()], vec![0.0; problem.dual_dim()])
            .expect("zero start has matching dimensions")
    }

    /// Extrapolation weight `θ` in `ȳ = y⁺ + θP⁻¹(y⁺ − y)` (1 for SPDHG).
    pub fn with_extrapolation(mut self, theta: f64) -> Self {
        self.extrapolation = theta;
        self
    }

    /// `y^{k−1}` reconstructed from the last block update.
    pub fn y_prev(&self) -> Vec<f64> {
        let mut y = self.y.clone();
        if let Some(u) = &self.last_update {
            let start = self.ergodic.offsets[u.block];
            y[start..start + u.previous.len()].copy_from_slice(&u.previous);
        }
        y
    }

    pub fn epoch(&self, n_blocks: usize) -> f64 {
        self.k as f64 / n_blocks as f64
    }

    fn resync(&mut self, problem: &SaddleProblem, sampler: &SamplerSpec) {
        let mut fresh = vec![0.0; self.aty.len()];
        problem.a.full_adjoint_into(&self.y, &mut fresh);
        let drift = linalg::dist(&fresh, &self.aty) / (1.0 + linalg::norm(&self.aty));
        self.max_drift = self.max_drift.max(drift);
        self.aty_bar.copy_from_slice(&fresh);
        if let Some(u) = &self.last_update {
            let rows = problem.a.block_rows(u.block);
            let d: Vec<f64> = self.y[rows].iter().zip(&u.previous).map(|(a, b)| a - b).collect();
            let w = self.extrapolation / sampler.prob(u.block);
            problem.a.adjoint_block_axpy(u.block, w, &d, &mut self.aty_bar);
        }
        self.aty = fresh;
    }
}

/// Snapshot of one iteration for the property checks.
#[derive(Debug, Clone)]
pub struct IterationProbe {
    pub x_prev: Vec<f64>,
    pub x: Vec<f64>,
    /// `y^k` (before the dual update).
    pub y: Vec<f64>,
    /// `y^{k−1}`.
    pub y_prev: Vec<f64>,
    /// Full-dimensional `ŷ^{k+1}`.
    pub y_hat: Vec<f64>,
    /// `y^{k+1}`.
    pub y_next: Vec<f64>,
    pub block: usize,
}

/// Recomputes `A^T y` from scratch every `max(1, n)` iterations.
fn resync_due(k: u64, n: usize) -> bool {
    k % (n.max(1) as u64) == 0
}

/// One SPDHG iteration.
pub fn spdhg_step(state: &mut SolverState, problem: &SaddleProblem, steps: &StepSizes, sampler: &SamplerSpec) -> Result<()> {
    step_impl(state, problem, steps, sampler, false).map(|_| ())
}

/// One SPDHG iteration that also returns the quantities needed by the
/// one-step inequality and the sampler identities.
pub fn spdhg_step_probed(
    state: &mut SolverState,
    problem: &SaddleProblem,
    steps: &StepSizes,
    sampler: &SamplerSpec,
) -> Result<IterationProbe> {
    step_impl(state, problem, steps, sampler, true).map(|p| p.expect("probe requested"))
}

fn step_impl(
    state: &mut SolverState,
    problem: &SaddleProblem,
    steps: &StepSizes,
    sampler: &SamplerSpec,
    probe: bool,
) -> Result<Option<IterationProbe>> {
    let tau = steps.tau;
    // x^k = prox_{τg}(x^{k−1} − τ A^T ȳ^k)
    std::mem::swap(&mut state.x, &mut state.x_prev);
    let v: Vec<f64> = state.x_prev.iter().zip(&state.aty_bar).map(|(x, a)| x - tau * a).collect();
    problem.g.prox_into(&v, Step::Scalar(tau), &mut state.x);
    if !linalg::all_finite(&state.x) {
        return Err(Error::Divergence { iter: state.k + 1 });
    }

    let i = sampler.draw(state.rng_counter);
    state.rng_counter += 1;

    let probe_data = probe.then(|| {
        let y_hat = problem.dual_candidate(&state.x, &state.y, &steps.sigma);
        (state.y.clone(), state.y_prev(), y_hat)
    });

    let rows = problem.a.block_rows(i);
    let sigma = steps.sigma[i];
    let mut v = vec![0.0; rows.len()];
    problem.a.block_apply_into(i, &state.x, &mut v);
    for (vj, yj) in v.iter_mut().zip(&state.y[rows.clone()]) {
        *vj = yj + sigma * *vj;
    }
    let mut y_new = vec![0.0; rows.len()];
    problem.block_conj_prox(i, &v, sigma, &mut y_new);
    if !linalg::all_finite(&y_new) {
        return Err(Error::Divergence { iter: state.k + 1 });
    }

    let previous = state.y[rows.clone()].to_vec();
    let diff: Vec<f64> = y_new.iter().zip(&previous).map(|(a, b)| a - b).collect();
    problem.a.adjoint_block_axpy(i, 1.0, &diff, &mut state.aty);
    state.aty_bar.copy_from_slice(&state.aty);
    problem
        .a
        .adjoint_block_axpy(i, state.extrapolation / sampler.prob(i), &diff, &mut state.aty_bar);

    state.ergodic.flush_block(i, &previous);
    state.y[rows].copy_from_slice(&y_new);
    state.last_update = Some(BlockUpdate { block: i, previous });
    state.ergodic.record(&state.x);
    state.k += 1;
    if resync_due(state.k, problem.n_blocks()) {
        state.resync(problem, sampler);
    }

    Ok(probe_data.map(|(y, y_prev, y_hat)| IterationProbe {
        x_prev: state.x_prev.clone(),
        x: state.x.clone(),
        y,
        y_prev,
        y_hat,
        y_next: state.y.clone(),
        block: i,
    }))
}

/// One iteration of the randomized Vu–Condat coordinate-descent baseline
/// with dual-block sampling:
///
/// ```text
///     x̄      = prox_{τg}(x − τ A^T y)
///     y_i⁺   = prox_{σ_i f_i*}(y_i + σ_i A_i(2x̄ − x))
///     x_j⁺   = x̄_j on the columns touched by A_i
/// ```
fn fb_vc_cd_step(
    state: &mut SolverState,
    problem: &SaddleProblem,
    steps: &StepSizes,
    sampler: &SamplerSpec,
    supports: &[Vec<usize>],
) -> Result<()> {
    let tau = steps.tau;
    let v: Vec<f64> = state.x.iter().zip(&state.aty).map(|(x, a)| x - tau * a).collect();
    let mut x_bar = vec![0.0; v.len()];
    problem.g.prox_into(&v, Step::Scalar(tau), &mut x_bar);

    let i = sampler.draw(state.rng_counter);
    state.rng_counter += 1;

    let extrap: Vec<f64> = x_bar.iter().zip(&state.x).map(|(xb, x)| 2.0 * xb - x).collect();
    let rows = problem.a.block_rows(i);
    let sigma = steps.sigma[i];
    let mut w = vec![0.0; rows.len()];
    problem.a.block_apply_into(i, &extrap, &mut w);
    for (wj, yj) in w.iter_mut().zip(&state.y[rows.clone()]) {
        *wj = yj + sigma * *wj;
    }
    let mut y_new = vec![0.0; rows.len()];
    problem.block_conj_prox(i, &w, sigma, &mut y_new);

    let previous = state.y[rows.clone()].to_vec();
    let diff: Vec<f64> = y_new.iter().zip(&previous).map(|(a, b)| a - b).collect();
    problem.a.adjoint_block_axpy(i, 1.0, &diff, &mut state.aty);
    state.aty_bar.copy_from_slice(&state.aty);

    state.x_prev.copy_from_slice(&state.x);
    for &j in &supports[i] {
        state.x[j] = x_bar[j];
    }
    if !linalg::all_finite(&state.x) || !linalg::all_finite(&y_new) {
        return Err(Error::Divergence { iter: state.k + 1 });
    }
    state.ergodic.flush_block(i, &previous);
    state.y[rows].copy_from_slice(&y_new);
    state.last_update = Some(BlockUpdate { block: i, previous });
    state.ergodic.record(&state.x);
    state.k += 1;
    if resync_due(state.k, problem.n_blocks()) {
        state.extrapolation = 0.0;
        state.resync(problem, sampler);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub metric: Metric,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub max_iters: u64,
    pub log_every: u64,
    #[serde(default)]
    pub stop: Option<StopRule>,
    #[serde(default)]
    pub metrics: Vec<Metric>,
}

impl RunConfig {
    pub fn new(max_iters: u64, log_every: u64) -> Self {
        Self {
            max_iters,
            log_every,
            stop: None,
            metrics: Vec::new(),
        }
    }

    pub fn with_metrics(mut self, metrics: &[Metric]) -> Self {
        self.metrics = metrics.to_vec();
        self
    }

    pub fn with_stop(mut self, metric: Metric, tol: f64) -> Self {
        self.stop = Some(StopRule { metric, tol });
        self
    }

    fn all_metrics(&self) -> Vec<Metric> {
        let mut m = self.metrics.clone();
        if let Some(s) = &self.stop {
            if !m.contains(&s.metric) {
                m.push(s.metric);
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SolverState,
    pub log: Vec<ConvergenceRecord>,
    pub steps: StepSizes,
    /// Whether the stop rule fired before `max_iters`.
    pub converged: bool,
}

/// Drives a step closure, logging every `log_every` iterations.
fn drive(
    mut state: SolverState,
    problem: &SaddleProblem,
    steps: &StepSizes,
    sampler: &SamplerSpec,
    config: &RunConfig,
    epoch_scale: f64,
    mut step: impl FnMut(&mut SolverState) -> Result<()>,
    mut view: impl FnMut(&mut SolverState),
) -> Result<RunOutput> {
    if config.log_every == 0 {
        return Err(Error::InvalidArgument("log_every must be positive".into()));
    }
    let metrics = config.all_metrics();
    diagnostics::check_metrics_available(problem, &metrics)?;
    let mut log = Vec::new();
    let mut converged = false;
    while state.k < config.max_iters {
        step(&mut state)?;
        if state.k % config.log_every == 0 || state.k == config.max_iters {
            view(&mut state);
            let rec = diagnostics::evaluate(problem, steps, sampler, &state, &metrics, state.k as f64 * epoch_scale)?;
            let stop = config
                .stop
                .map(|s| rec.get(s.metric).is_some_and(|v| v <= s.tol))
                .unwrap_or(false);
            log.push(rec);
            if stop {
                converged = true;
                break;
            }
        }
    }
    Ok(RunOutput {
        state,
        log,
        steps: steps.clone(),
        converged,
    })
}

/// SPDHG from the zero start.
pub fn run(problem: &SaddleProblem, steps: &StepSizes, sampler: &SamplerSpec, config: &RunConfig) -> Result<RunOutput> {
    run_from(SolverState::zeros(problem), problem, steps, sampler, config)
}

/// SPDHG from a given state.
pub fn run_from(
    state: SolverState,
    problem: &SaddleProblem,
    steps: &StepSizes,
    sampler: &SamplerSpec,
    config: &RunConfig,
) -> Result<RunOutput> {
    check_run_inputs(problem, steps, sampler)?;
    let n = problem.n_blocks() as f64;
    drive(
        state,
        problem,
        steps,
        sampler,
        config,
        1.0 / n,
        |s| spdhg_step(s, problem, steps, sampler),
        |_| {},
    )
}

fn check_run_inputs(problem: &SaddleProblem, steps: &StepSizes, sampler: &SamplerSpec) -> Result<()> {
    if sampler.n() != problem.n_blocks() {
        return Err(Error::dim("sampler blocks", problem.n_blocks(), sampler.n()));
    }
    if steps.sigma.len() != problem.n_blocks() {
        return Err(Error::dim("dual step sizes", problem.n_blocks(), steps.sigma.len()));
    }
    Ok(())
}

/// Deterministic PDHG: SPDHG with the whole dual as one block.
///
/// `steps` must be single-block step sizes; `None` selects `τ = σ = γ/‖A‖`.
pub fn pdhg_run(problem: &SaddleProblem, steps: Option<&StepSizes>, gamma: f64, config: &RunConfig) -> Result<RunOutput> {
    let single = problem.single_block();
    let sampler = SamplerSpec::uniform(1, 0);
    let steps = match steps {
        Some(s) => s.clone(),
        None => default_step_sizes(&single.a, gamma, &sampler)?,
    };
    run(&single, &steps, &sampler, config)
}

/// Step sizes and extrapolation of the strongly convex SPDHG variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StronglyConvexSteps {
    pub steps: StepSizes,
    pub theta: f64,
    pub mu_g: f64,
    pub mu: Vec<f64>,
}

/// Strong convexity constants `μ_g` of `g` and `μ_i` of each `f_i*`.
pub fn strong_convexity_constants(problem: &SaddleProblem) -> Result<(f64, Vec<f64>)> {
    let mu_g = problem
        .g
        .strong_convexity()
        .filter(|m| *m > 0.0)
        .ok_or_else(|| Error::Inapplicable("g is not strongly convex (mu_g = 0 or unknown); use plain SPDHG".into()))?;
    let mut mu = Vec::with_capacity(problem.n_blocks());
    for i in 0..problem.n_blocks() {
        let mut m = f64::INFINITY;
        for piece in problem.block_pieces(i) {
            let mi = problem
                .f
                .piece(piece)
                .conj_strong_convexity()
                .filter(|v| *v > 0.0)
                .ok_or_else(|| {
                    Error::Inapplicable(format!(
                        "f_{piece}* is not strongly convex (mu_i = 0 or unknown); use plain SPDHG"
                    ))
                })?;
            m = m.min(mi);
        }
        mu.push(m);
    }
    Ok((mu_g, mu))
}

/// Strongly convex step rule: balance the primal and dual contraction
/// rates `μ_g τ = p_i μ_i σ_i` subject to `τ σ_i ‖A_i‖² ≤ p_i γ²`, giving
///
/// ```text
///     σ_i = γ √(μ_g/μ_i) / ‖A_i‖
///     τ   = min_i p_i γ √(μ_i/μ_g) / ‖A_i‖
///     θ   = max{ 1/(1 + 2μ_g τ), max_i 1 − 2 p_i μ_i σ_i / (1 + 2 μ_i σ_i) }
/// ```
pub fn strongly_convex_steps(
    problem: &SaddleProblem,
    mu_g: f64,
    mu: &[f64],
    gamma: f64,
    sampler: &SamplerSpec,
) -> Result<StronglyConvexSteps> {
    check_gamma(gamma)?;
    if mu.len() != problem.n_blocks() {
        return Err(Error::dim("strong convexity constants", problem.n_blocks(), mu.len()));
    }
    let norms = nonzero_norms(&problem.a)?;
    let sigma: Vec<f64> = norms
        .iter()
        .zip(mu)
        .map(|(l, m)| gamma * (mu_g / m).sqrt() / l)
        .collect();
    let tau = norms
        .iter()
        .zip(mu)
        .zip(sampler.probs())
        .map(|((l, m), p)| p * gamma * (m / mu_g).sqrt() / l)
        .fold(f64::INFINITY, f64::min);
    let mut theta = 1.0 / (1.0 + 2.0 * mu_g * tau);
    for ((s, m), p) in sigma.iter().zip(mu).zip(sampler.probs()) {
        theta = theta.max(1.0 - 2.0 * p * m * s / (1.0 + 2.0 * m * s));
    }
    let steps = StepSizes::new(tau, sigma, gamma, &problem.a, sampler)?;
    Ok(StronglyConvexSteps {
        steps,
        theta,
        mu_g,
        mu: mu.to_vec(),
    })
}

/// SPDHG-μ: the SPDHG update with strongly convex step sizes and
/// extrapolation `θ < 1`. Needs `μ_g > 0` and every `μ_i > 0`.
pub fn spdhg_mu_run(
    problem: &SaddleProblem,
    gamma: f64,
    sampler: &SamplerSpec,
    config: &RunConfig,
) -> Result<(RunOutput, StronglyConvexSteps)> {
    let (mu_g, mu) = strong_convexity_constants(problem)?;
    let sc = strongly_convex_steps(problem, mu_g, &mu, gamma, sampler)?;
    let state = SolverState::zeros(problem).with_extrapolation(sc.theta);
    let out = run_from(state, problem, &sc.steps, sampler, config)?;
    Ok((out, sc))
}

/// Randomized Vu–Condat coordinate descent with the smaller step sizes of
/// [`fb_vc_cd_step_sizes`].
pub fn fb_vc_cd_run(problem: &SaddleProblem, gamma: f64, sampler: &SamplerSpec, config: &RunConfig) -> Result<RunOutput> {
    let steps = fb_vc_cd_step_sizes(&problem.a, gamma)?;
    check_run_inputs(problem, &steps, sampler)?;
    let supports: Vec<Vec<usize>> = (0..problem.n_blocks()).map(|i| problem.a.block_support(i)).collect();
    let state = SolverState::zeros(problem).with_extrapolation(0.0);
    let n = problem.n_blocks() as f64;
    drive(
        state,
        problem,
        &steps,
        sampler,
        config,
        1.0 / n,
        |s| fb_vc_cd_step(s, problem, &steps, sampler, &supports),
        |_| {},
    )
}

/// Options of the variance-reduced baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrgOptions {
    /// Step as a fraction of `1/L_max`, with `L_max = n·max_i‖A_i‖²`.
    pub step_scale: f64,
    /// Inner iterations per snapshot, as a multiple of `n`.
    pub inner_factor: f64,
}

impl Default for SvrgOptions {
    fn default() -> Self {
        Self {
            step_scale: 0.25,
            inner_factor: 2.0,
        }
    }
}

fn least_squares_targets(problem: &SaddleProblem) -> Result<Vec<f64>> {
    let mut b = Vec::with_capacity(problem.dual_dim());
    for p in problem.f.pieces() {
        match p.kind() {
            FunctionKind::LeastSquares { b: bi } => b.extend_from_slice(bi),
            _ => {
                return Err(Error::Inapplicable(
                    "SVRG needs smooth least-squares losses f_i".into(),
                ))
            }
        }
    }
    Ok(b)
}

/// Proximal SVRG on `Σ_i f_i(A_i x) + g(x)` with least-squares `f_i`.
///
/// An iteration is one inner step; the epoch column counts component
/// gradient evaluations divided by `n` (a snapshot costs `n`, an inner step 2).
pub fn svrg_run(problem: &SaddleProblem, sampler: &SamplerSpec, options: SvrgOptions, config: &RunConfig) -> Result<RunOutput> {
    let b = least_squares_targets(problem)?;
    let a = &problem.a;
    let n = problem.n_blocks();
    if sampler.n() != n {
        return Err(Error::dim("sampler blocks", n, sampler.n()));
    }
    let norms = nonzero_norms(a)?;
    let l_max = n as f64 * norms.iter().map(|l| l * l).fold(0.0, f64::max);
    let eta = options.step_scale / l_max;
    let inner = ((options.inner_factor * n as f64).round() as u64).max(1);
    let steps = StepSizes::unchecked(eta, vec![1.0; n], DEFAULT_GAMMA)?;

    let residual = |i: usize, x: &[f64]| -> Vec<f64> {
        let rows = a.block_rows(i);
        let mut r = vec![0.0; rows.len()];
        a.block_apply_into(i, x, &mut r);
        for (rj, bj) in r.iter_mut().zip(&b[rows]) {
            *rj -= bj;
        }
        r
    };

    let mut snapshot = vec![0.0; problem.primal_dim()];
    let mut full_grad = vec![0.0; problem.primal_dim()];
    let mut evals: u64 = 0;
    let mut state = SolverState::zeros(problem);
    let metrics = config.all_metrics();
    diagnostics::check_metrics_available(problem, &metrics)?;
    let mut log = Vec::new();
    let mut converged = false;
    let mut since_snapshot = inner;
    let mut v = vec![0.0; problem.primal_dim()];
    while state.k < config.max_iters {
        if since_snapshot == inner {
            snapshot.copy_from_slice(&state.x);
            full_grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..n {
                a.adjoint_block_axpy(i, 1.0, &residual(i, &snapshot), &mut full_grad);
            }
            evals += n as u64;
            since_snapshot = 0;
        }
        let i = sampler.draw(state.rng_counter);
        state.rng_counter += 1;
        v.copy_from_slice(&full_grad);
        let r_now = residual(i, &state.x);
        let r_snap = residual(i, &snapshot);
        let d: Vec<f64> = r_now.iter().zip(&r_snap).map(|(p, q)| p - q).collect();
        a.adjoint_block_axpy(i, n as f64, &d, &mut v);
        state.x_prev.copy_from_slice(&state.x);
        let arg: Vec<f64> = state.x.iter().zip(&v).map(|(x, g)| x - eta * g).collect();
        problem.g.prox_into(&arg, Step::Scalar(eta), &mut state.x);
        if !linalg::all_finite(&state.x) {
            return Err(Error::Divergence { iter: state.k + 1 });
        }
        evals += 2;
        since_snapshot += 1;
        state.ergodic.record(&state.x);
        state.k += 1;
        if state.k % config.log_every == 0 || state.k == config.max_iters {
            let rec = diagnostics::evaluate(problem, &steps, sampler, &state, &metrics, evals as f64 / n as f64)?;
            let stop = config.stop.map(|s| rec.get(s.metric).is_some_and(|m| m <= s.tol)).unwrap_or(false);
            log.push(rec);
            if stop {
                converged = true;
                break;
            }
        }
    }
    Ok(RunOutput {
        state,
        log,
        steps,
        converged,
    })
}

/// Stochastic dual coordinate ascent for `g = (λ/2)‖·‖²` with scalar
/// least-squares or hinge blocks: exact maximisation of the dual over one
/// coordinate per iteration, with primal `x = −A^T y / λ`.
pub fn sdca_run(problem: &SaddleProblem, sampler: &SamplerSpec, config: &RunConfig) -> Result<RunOutput> {
    let lambda = match problem.g.kind() {
        FunctionKind::SquaredL2 { lambda } if *lambda > 0.0 => *lambda,
        _ => return Err(Error::Inapplicable("SDCA needs g = (lambda/2)||x||^2 with lambda > 0".into())),
    };
    let a = &problem.a;
    let n = problem.n_blocks();
    if sampler.n() != n {
        return Err(Error::dim("sampler blocks", n, sampler.n()));
    }
    if (0..n).any(|i| a.block_dim(i) != 1) {
        return Err(Error::Inapplicable("SDCA needs one row per dual block".into()));
    }
    for p in problem.f.pieces() {
        if !matches!(p.kind(), FunctionKind::LeastSquares { .. } | FunctionKind::Hinge { .. }) {
            return Err(Error::Inapplicable("SDCA needs least-squares or hinge losses".into()));
        }
    }
    let row_sq: Vec<f64> = (0..n).map(|r| linalg::norm_sq(a.row(r).1)).collect();
    let steps = StepSizes::unchecked(1.0 / lambda, vec![1.0; n], DEFAULT_GAMMA)?;
    let set_primal = |s: &mut SolverState| {
        for (x, w) in s.x.iter_mut().zip(&s.aty) {
            *x = -w / lambda;
        }
    };
    let state = SolverState::zeros(problem).with_extrapolation(0.0);
    drive(
        state,
        problem,
        &steps,
        sampler,
        config,
        1.0 / n as f64,
        |s| {
            let i = sampler.draw(s.rng_counter);
            s.rng_counter += 1;
            let q = row_sq[i];
            let r = a.block_rows(i).start;
            let old = s.y[r];
            let (cols, vals) = a.row(r);
            let dot: f64 = cols.iter().zip(vals).map(|(&c, &v)| v * s.aty[c]).sum();
            let piece = &problem.f.pieces()[problem.block_pieces(i).start];
            let new = if q == 0.0 {
                old
            } else {
                match piece.kind() {
                    FunctionKind::LeastSquares { b } => (-b[0] - dot / lambda + q * old / lambda) / (1.0 + q / lambda),
                    FunctionKind::Hinge { c, sign } => {
                        let w_old = sign * old;
                        let w = (w_old - (lambda + sign * dot) / q).clamp(-c, 0.0);
                        sign * w
                    }
                    _ => unreachable!("checked above"),
                }
            };
            if !new.is_finite() {
                return Err(Error::Divergence { iter: s.k + 1 });
            }
            s.ergodic.flush_block(i, &[old]);
            a.adjoint_block_axpy(i, 1.0, &[new - old], &mut s.aty);
            s.y[r] = new;
            s.last_update = Some(BlockUpdate {
                block: i,
                previous: vec![old],
            });
            s.k += 1;
            if resync_due(s.k, n) {
                s.resync(problem, sampler);
            }
            Ok(())
        },
        set_primal,
    )
}
