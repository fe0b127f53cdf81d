//! Theory-side quantities: Bregman distances, the Lyapunov forms `V` and
//! `V_k`, KKT residuals, gaps, objective and feasibility residuals, the
//! ergodic-rate constants and empirical rate fits.
//!
//! Weighted norms follow the solver's step sizes:
//! `‖x‖²_{τ⁻¹} = ‖x‖²/τ`, `‖y‖²_{D(σ)⁻¹P⁻¹} = Σ_i ‖y_i‖²/(σ_i p_i)` and
//! `‖y‖²_{D(σ)P} = Σ_i σ_i p_i ‖y_i‖²`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcs::Step;
use crate::linalg;
use crate::sampling::SamplerSpec;
use crate::solver::{IterationProbe, SaddleProblem, SolverState, StepSizes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `P(x) − P(x*)`, or the signed `g(x) − g(x*)` when `f = δ_b`.
    ObjectiveResidual,
    /// Same at the ergodic average `x_av`.
    ObjectiveResidualAvg,
    /// `‖Ax − b‖`.
    Feasibility,
    /// `‖Ax − b‖_{D(σ)P}`.
    FeasibilityWeighted,
    /// `‖Ax_av − b‖_{D(σ)P}`.
    FeasibilityAvgWeighted,
    /// S-weighted KKT residual.
    KktResidual,
    /// `‖x − x*‖ / ‖x*‖` (absolute when `x* = 0`).
    DistToRef,
    /// `D_g(x; z*) + D_{f*}(y; z*)`.
    Bregman,
    /// Smoothed gap at the ergodic pair with `α = β = 1/K`, anchored at the start.
    SmoothedGap,
    /// `H(x, y; x*, y*)`.
    GapAtRef,
    /// `V_{k+1}(x^k − x*, y^{k+1} − y*)`.
    LyapunovV,
}

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::ObjectiveResidual,
        Metric::ObjectiveResidualAvg,
        Metric::Feasibility,
        Metric::FeasibilityWeighted,
        Metric::FeasibilityAvgWeighted,
        Metric::KktResidual,
        Metric::DistToRef,
        Metric::Bregman,
        Metric::SmoothedGap,
        Metric::GapAtRef,
        Metric::LyapunovV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ObjectiveResidual => "objective_residual",
            Metric::ObjectiveResidualAvg => "objective_residual_avg",
            Metric::Feasibility => "feasibility",
            Metric::FeasibilityWeighted => "feasibility_weighted",
            Metric::FeasibilityAvgWeighted => "feasibility_avg_weighted",
            Metric::KktResidual => "kkt_residual",
            Metric::DistToRef => "dist_to_ref",
            Metric::Bregman => "bregman",
            Metric::SmoothedGap => "smoothed_gap",
            Metric::GapAtRef => "gap_at_ref",
            Metric::LyapunovV => "lyapunov_v",
        }
    }

    pub fn needs_reference(self) -> bool {
        !matches!(
            self,
            Metric::Feasibility
                | Metric::FeasibilityWeighted
                | Metric::FeasibilityAvgWeighted
                | Metric::KktResidual
                | Metric::SmoothedGap
        )
    }

    pub fn needs_constraint(self) -> bool {
        matches!(
            self,
            Metric::Feasibility | Metric::FeasibilityWeighted | Metric::FeasibilityAvgWeighted
        )
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub iter: u64,
    pub epoch: f64,
    pub values: Vec<(Metric, f64)>,
}

impl ConvergenceRecord {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v)
    }
}

/// Rejects metric lists the problem cannot support.
pub fn check_metrics_available(problem: &SaddleProblem, metrics: &[Metric]) -> Result<()> {
    for &m in metrics {
        if m.needs_reference() && problem.reference.is_none() {
            return Err(Error::MissingReference);
        }
        if m.needs_constraint() && !problem.is_constrained() {
            return Err(Error::InvalidArgument(format!(
                "metric {m} needs a constraint vector b (f = indicator of b)"
            )));
        }
    }
    Ok(())
}

fn reference(problem: &SaddleProblem) -> Result<&crate::solver::ReferenceSolution> {
    problem.reference.as_ref().ok_or(Error::MissingReference)
}

/// Evaluates `metrics` at the current state of a trajectory.
pub fn evaluate(
    problem: &SaddleProblem,
    steps: &StepSizes,
    sampler: &SamplerSpec,
    state: &SolverState,
    metrics: &[Metric],
    epoch: f64,
) -> Result<ConvergenceRecord> {
    let mut values = Vec::with_capacity(metrics.len());
    let probs = sampler.probs();
    let x_avg = || state.ergodic.average_x().unwrap_or_else(|| state.x.clone());
    for &m in metrics {
        let v = match m {
            Metric::ObjectiveResidual => objective_residual(problem, &state.x)?,
            Metric::ObjectiveResidualAvg => objective_residual(problem, &x_avg())?,
            Metric::Feasibility => feasibility(problem, &state.x, None)?,
            Metric::FeasibilityWeighted => feasibility(problem, &state.x, Some((steps, probs)))?,
            Metric::FeasibilityAvgWeighted => feasibility(problem, &x_avg(), Some((steps, probs)))?,
            Metric::KktResidual => kkt_residual(problem, &state.x, &state.y, KktWeighting::Steps(steps))?,
            Metric::DistToRef => dist_to_ref(problem, &state.x)?,
            Metric::Bregman => {
                let r = reference(problem)?;
                bregman_dg(problem, &state.x, &r.x_star, &r.y_star)?
                    + bregman_dfstar(problem, &state.y, &r.x_star, &r.y_star)?
            }
            Metric::SmoothedGap => {
                let k = state.ergodic.count().max(1) as f64;
                let xa = x_avg();
                let ya = state.ergodic.average_y(&state.y).unwrap_or_else(|| state.y.clone());
                smoothed_gap(problem, &xa, &ya, &state.x0, &state.y0, 1.0 / k, 1.0 / k)?
            }
            Metric::GapAtRef => {
                let r = reference(problem)?;
                gap_at(problem, &state.x, &state.y, &r.x_star, &r.y_star)?
            }
            Metric::LyapunovV => {
                let r = reference(problem)?;
                let dx = linalg::sub(&state.x, &r.x_star);
                let dy = linalg::sub(&state.y, &r.y_star);
                let ydiff = linalg::sub(&state.y, &state.y_prev());
                lyapunov_vk(problem, steps, probs, &dx, &dy, &ydiff)?
            }
        };
        values.push((m, v));
    }
    Ok(ConvergenceRecord {
        iter: state.k,
        epoch,
        values,
    })
}

/// Per-block dual weights `w_i` expanded to one entry per dual coordinate.
fn dual_weights(problem: &SaddleProblem, w: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; problem.dual_dim()];
    for i in 0..problem.n_blocks() {
        let wi = w(i);
        out[problem.a.block_rows(i)].iter_mut().for_each(|v| *v = wi);
    }
    out
}

fn weighted_sq(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| b * a * a).sum()
}

/// `‖y‖²_{D(σ)⁻¹P⁻¹}`.
pub fn dual_norm_sq(problem: &SaddleProblem, steps: &StepSizes, probs: &[f64], y: &[f64]) -> f64 {
    weighted_sq(y, &dual_weights(problem, |i| 1.0 / (steps.sigma()[i] * probs[i])))
}

/// `‖y‖²_{D(σ)⁻¹(P⁻¹ − I)}`.
pub fn dual_norm_sq_excess(problem: &SaddleProblem, steps: &StepSizes, probs: &[f64], y: &[f64]) -> f64 {
    weighted_sq(y, &dual_weights(problem, |i| (1.0 / probs[i] - 1.0) / steps.sigma()[i]))
}

fn check_lyapunov_dims(problem: &SaddleProblem, steps: &StepSizes, probs: &[f64], dx: &[f64], dy: &[f64]) -> Result<()> {
    if dx.len() != problem.primal_dim() {
        return Err(Error::dim("primal difference", problem.primal_dim(), dx.len()));
    }
    if dy.len() != problem.dual_dim() {
        return Err(Error::dim("dual difference", problem.dual_dim(), dy.len()));
    }
    if probs.len() != problem.n_blocks() || steps.sigma().len() != problem.n_blocks() {
        return Err(Error::dim("blocks", problem.n_blocks(), probs.len()));
    }
    Ok(())
}

/// `⟨A dx, P⁻¹ dy⟩`.
fn cross_term(problem: &SaddleProblem, probs: &[f64], dx: &[f64], dy: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut buf = Vec::new();
    for i in 0..problem.n_blocks() {
        let rows = problem.a.block_rows(i);
        buf.resize(rows.len(), 0.0);
        problem.a.block_apply_into(i, dx, &mut buf);
        acc += linalg::dot(&buf, &dy[rows]) / probs[i];
    }
    acc
}

/// `V(dx, dy) = ½‖dx‖²_{τ⁻¹} + ½‖dy‖²_{D(σ)⁻¹P⁻¹} + ⟨A dx, P⁻¹ dy⟩`.
pub fn lyapunov_v(problem: &SaddleProblem, steps: &StepSizes, probs: &[f64], dx: &[f64], dy: &[f64]) -> Result<f64> {
    check_lyapunov_dims(problem, steps, probs, dx, dy)?;
    Ok(0.5 * linalg::norm_sq(dx) / steps.tau()
        + 0.5 * dual_norm_sq(problem, steps, probs, dy)
        + cross_term(problem, probs, dx, dy))
}

/// `V_k(dx, dy)` with trailing dual difference `ydiff = y^k − y^{k−1}`:
/// `½‖dx‖²_{τ⁻¹} − ⟨A dx, P⁻¹ ydiff⟩ + ½‖ydiff‖²_{D(σ)⁻¹P⁻¹} + ½‖dy‖²_{D(σ)⁻¹P⁻¹}`.
pub fn lyapunov_vk(
    problem: &SaddleProblem,
    steps: &StepSizes,
    probs: &[f64],
    dx: &[f64],
    dy: &[f64],
    ydiff: &[f64],
) -> Result<f64> {
    check_lyapunov_dims(problem, steps, probs, dx, dy)?;
    if ydiff.len() != dy.len() {
        return Err(Error::dim("trailing dual difference", dy.len(), ydiff.len()));
    }
    Ok(0.5 * linalg::norm_sq(dx) / steps.tau() - cross_term(problem, probs, dx, ydiff)
        + 0.5 * dual_norm_sq(problem, steps, probs, ydiff)
        + 0.5 * dual_norm_sq(problem, steps, probs, dy))
}

/// `C₁(½‖dx‖²_{τ⁻¹} + ½‖dy‖²_{D(σ)⁻¹P⁻¹})`, the lower bound on `V(dx, dy)`.
///
/// The bound needs `dy` supported on a single block, as every dual
/// difference produced by the algorithm is.
pub fn lyapunov_v_lower(problem: &SaddleProblem, steps: &StepSizes, probs: &[f64], dx: &[f64], dy: &[f64]) -> f64 {
    steps.c1() * (0.5 * linalg::norm_sq(dx) / steps.tau() + 0.5 * dual_norm_sq(problem, steps, probs, dy))
}

/// `C₁(½‖dx‖²_{τ⁻¹} + ½‖ydiff‖²_{D(σ)⁻¹P⁻¹}) + ½‖dy‖²_{D(σ)⁻¹P⁻¹}`, the lower bound on `V_k`.
pub fn lyapunov_vk_lower(
    problem: &SaddleProblem,
    steps: &StepSizes,
    probs: &[f64],
    dx: &[f64],
    dy: &[f64],
    ydiff: &[f64],
) -> f64 {
    steps.c1() * (0.5 * linalg::norm_sq(dx) / steps.tau() + 0.5 * dual_norm_sq(problem, steps, probs, ydiff))
        + 0.5 * dual_norm_sq(problem, steps, probs, dy)
}

/// `Δ⁰ = V₁(x⁰ − x*, y¹ − y*)`; with `y¹ = y⁰` this is
/// `½‖x⁰ − x*‖²_{τ⁻¹} + ½‖y⁰ − y*‖²_{D(σ)⁻¹P⁻¹}`.
pub fn delta0(problem: &SaddleProblem, steps: &StepSizes, probs: &[f64], x0: &[f64], y0: &[f64]) -> Result<f64> {
    let r = reference(problem)?;
    let dx = linalg::sub(x0, &r.x_star);
    let dy = linalg::sub(y0, &r.y_star);
    lyapunov_vk(problem, steps, probs, &dx, &dy, &vec![0.0; dy.len()])
}

/// `D_g(x; z̄) = g(x) − g(x̄) + ⟨A^T ȳ, x − x̄⟩`. Infinite outside `dom g`.
pub fn bregman_dg(problem: &SaddleProblem, x: &[f64], xbar: &[f64], ybar: &[f64]) -> Result<f64> {
    let aty = problem.a.full_adjoint(ybar)?;
    if x.len() != xbar.len() || x.len() != problem.primal_dim() {
        return Err(Error::dim("primal point", problem.primal_dim(), x.len()));
    }
    let gx = problem.g.value(x);
    let gb = problem.g.value(xbar);
    if !gx.is_finite() || !gb.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(gx - gb + linalg::dot(&aty, &linalg::sub(x, xbar)))
}

/// `D_{f*}(y; z̄) = f*(y) − f*(ȳ) − ⟨A x̄, y − ȳ⟩`. Infinite outside `dom f*`.
pub fn bregman_dfstar(problem: &SaddleProblem, y: &[f64], xbar: &[f64], ybar: &[f64]) -> Result<f64> {
    let ax = problem.a.full_apply(xbar)?;
    if y.len() != ybar.len() || y.len() != problem.dual_dim() {
        return Err(Error::dim("dual point", problem.dual_dim(), y.len()));
    }
    let fy = problem.f.conj_value(y);
    let fb = problem.f.conj_value(ybar);
    if !fy.is_finite() || !fb.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(fy - fb - linalg::dot(&ax, &linalg::sub(y, ybar)))
}

#[derive(Debug, Clone, Copy)]
pub enum KktWeighting<'a> {
    Euclidean,
    /// Primal part weighted by `1/τ`, dual block `i` by `1/σ_i`.
    Steps(&'a StepSizes),
}

/// `sqrt(dist(−A^T y, ∂g(x))² + Σ_i dist(A_i x, ∂f_i*(y_i))²)` in the chosen
/// weighting. Infinite when `y ∉ dom f*`.
pub fn kkt_residual(problem: &SaddleProblem, x: &[f64], y: &[f64], weighting: KktWeighting<'_>) -> Result<f64> {
    let aty = problem.a.full_adjoint(y)?;
    let ax = problem.a.full_apply(x)?;
    let neg: Vec<f64> = aty.iter().map(|v| -v).collect();
    let dg = problem.g.subdiff_dist(x, &neg)?;
    let (wp, piece_w) = match weighting {
        KktWeighting::Euclidean => (1.0, vec![1.0; problem.f.len()]),
        KktWeighting::Steps(s) => {
            let mut w = vec![0.0; problem.f.len()];
            for i in 0..problem.n_blocks() {
                for piece in problem.block_pieces(i) {
                    w[piece] = 1.0 / s.sigma()[i];
                }
            }
            (1.0 / s.tau(), w)
        }
    };
    match problem.f.conj_subdiff_dist_weighted(y, &ax, &piece_w) {
        Ok(df) => Ok((wp * dg * dg + df * df).sqrt()),
        Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// `H(x̄, ȳ; x, y) = g(x̄) + ⟨Ax̄, y⟩ − f*(y) − g(x) − ⟨Ax, ȳ⟩ + f*(ȳ)`.
pub fn gap_at(problem: &SaddleProblem, xbar: &[f64], ybar: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    let axbar = problem.a.full_apply(xbar)?;
    let ax = problem.a.full_apply(x)?;
    if y.len() != problem.dual_dim() || ybar.len() != problem.dual_dim() {
        return Err(Error::dim("dual point", problem.dual_dim(), y.len()));
    }
    let fbar = problem.f.conj_value(ybar);
    let gbar = problem.g.value(xbar);
    if !fbar.is_finite() || !gbar.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(gbar + linalg::dot(&axbar, y) - problem.f.conj_value(y) - problem.g.value(x) - linalg::dot(&ax, ybar) + fbar)
}

/// `𝒢_{α,β}(x̄, ȳ; x̂, ŷ) = sup_{x,y} H(x̄, ȳ; x, y) − (α/2)‖x − x̂‖² − (β/2)‖y − ŷ‖²`,
/// evaluated through its two prox maximisers.
pub fn smoothed_gap(
    problem: &SaddleProblem,
    xbar: &[f64],
    ybar: &[f64],
    xhat: &[f64],
    yhat: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument("smoothing parameters must be positive".into()));
    }
    let axbar = problem.a.full_apply(xbar)?;
    let aty = problem.a.full_adjoint(ybar)?;
    if yhat.len() != problem.dual_dim() || xhat.len() != problem.primal_dim() {
        return Err(Error::dim("anchor", problem.dual_dim(), yhat.len()));
    }
    let vy: Vec<f64> = yhat.iter().zip(&axbar).map(|(a, b)| a + b / beta).collect();
    let v = problem.f.conj_prox(&vy, &vec![1.0 / beta; problem.f.len()])?;
    let ux: Vec<f64> = xhat.iter().zip(&aty).map(|(a, b)| a - b / alpha).collect();
    let mut u = vec![0.0; ux.len()];
    problem.g.prox_into(&ux, Step::Scalar(1.0 / alpha), &mut u);
    Ok(gap_at(problem, xbar, ybar, &u, &v)?
        - 0.5 * alpha * linalg::dist(&u, xhat).powi(2)
        - 0.5 * beta * linalg::dist(&v, yhat).powi(2))
}

/// `P(x) − P(x*)`, or the signed `g(x) − g(x*)` for constrained problems.
pub fn objective_residual(problem: &SaddleProblem, x: &[f64]) -> Result<f64> {
    let r = reference(problem)?;
    if problem.is_constrained() {
        Ok(problem.g.value(x) - r.objective_star)
    } else {
        Ok(problem.objective(x) - r.objective_star)
    }
}

/// `‖Ax − b‖`, or `‖Ax − b‖_{D(σ)P}` when step sizes and probabilities are given.
pub fn feasibility(problem: &SaddleProblem, x: &[f64], weights: Option<(&StepSizes, &[f64])>) -> Result<f64> {
    let b = problem
        .b()
        .ok_or_else(|| Error::InvalidArgument("feasibility needs a constraint vector b".into()))?;
    let r = linalg::sub(&problem.a.full_apply(x)?, b);
    Ok(match weights {
        None => linalg::norm(&r),
        Some((steps, probs)) => weighted_sq(&r, &dual_weights(problem, |i| steps.sigma()[i] * probs[i])).sqrt(),
    })
}

/// `‖x − x*‖/‖x*‖`, falling back to `‖x − x*‖` when `x* = 0`.
pub fn dist_to_ref(problem: &SaddleProblem, x: &[f64]) -> Result<f64> {
    let r = reference(problem)?;
    let d = linalg::dist(x, &r.x_star);
    let s = linalg::norm(&r.x_star);
    Ok(if s > 0.0 { d / s } else { d })
}

/// Ergodic-rate constants with a per-term breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub ce: f64,
    /// Lipschitz-`f` objective constant.
    pub ce1: Option<f64>,
    /// Constrained `g`-residual constant.
    pub ce2: Option<f64>,
    /// Constrained feasibility constant.
    pub ce3: Option<f64>,
    pub delta0: f64,
    /// Lipschitz constant of `f` in the `‖·‖_{D(σ)}` norm, when known.
    pub lipschitz: Option<f64>,
    pub terms: Vec<(String, f64)>,
}

/// Evaluates `C_e` termwise (with the auxiliary dual point equal to `y¹`,
/// so its distance term vanishes and the anchor is `y¹`), then the
/// Lipschitz and constrained constants where they apply.
pub fn theory_constants(
    problem: &SaddleProblem,
    steps: &StepSizes,
    probs: &[f64],
    x0: &[f64],
    y0: &[f64],
) -> Result<TheoryConstants> {
    let r = reference(problem)?;
    let gamma = steps.gamma();
    let c1 = steps.c1();
    let p_min = probs.iter().cloned().fold(f64::INFINITY, f64::min);
    let d0 = delta0(problem, steps, probs, x0, y0)?;
    let y1 = y0;

    let mut conj_excess = 0.0;
    let mut ref_term = 0.0;
    let ax_star = problem.a.full_apply(&r.x_star)?;
    for i in 0..problem.n_blocks() {
        let rows = problem.a.block_rows(i);
        let w = 1.0 / probs[i] - 1.0;
        let mut f1 = 0.0;
        let mut fstar = 0.0;
        for piece in problem.block_pieces(i) {
            let pr = problem.f.piece_range(piece);
            f1 += problem.f.piece(piece).conj_value(&y1[pr.clone()]);
            fstar += problem.f.piece(piece).conj_value(&r.y_star[pr]);
        }
        if !f1.is_finite() {
            return Err(Error::Infeasible(format!("starting dual block {i} lies outside dom f*")));
        }
        if w == 0.0 {
            continue;
        }
        conj_excess += w * f1;
        let axn = (steps.sigma()[i] * probs[i]).sqrt() * linalg::norm(&ax_star[rows]);
        ref_term += w * (-fstar + axn * (2.0 * d0).sqrt());
    }

    let x0_tau = linalg::norm_sq(x0) / steps.tau();
    let dy1 = linalg::sub(y1, &r.y_star);
    let dy1_norm_sq = dual_norm_sq(problem, steps, probs, &dy1);
    let terms = vec![
        ("gamma_x0".to_string(), gamma * x0_tau),
        ("gamma_y1_over_pmin".to_string(), gamma / p_min * dy1_norm_sq),
        ("two_gamma_delta0_over_pmin".to_string(), 2.0 * gamma / p_min * d0),
        ("delta0_over_c1".to_string(), d0 / c1),
        ("conjugate_excess".to_string(), conj_excess),
        ("reference_term".to_string(), ref_term),
    ];
    let ce: f64 = terms.iter().map(|(_, v)| v).sum();

    let dx0 = linalg::sub(x0, &r.x_star);
    let x_dist = linalg::norm_sq(&dx0) / steps.tau();

    let lipschitz = if problem.f.is_empty() {
        None
    } else {
        let mut acc = 0.0;
        let mut ok = true;
        for i in 0..problem.n_blocks() {
            for piece in problem.block_pieces(i) {
                let f = problem.f.piece(piece);
                match f.lipschitz() {
                    Some(c) if f.is_finite_valued() => {
                        acc += problem.f.piece_range(piece).len() as f64 * c * c / steps.sigma()[i];
                    }
                    _ => ok = false,
                }
            }
        }
        ok.then(|| acc.sqrt())
    };
    let ce1 = lipschitz.map(|l| ce + 2.0 / p_min * l * l + (1.0 + 2.0 * gamma) / 2.0 * x_dist);

    let (ce2, ce3) = if problem.is_constrained() {
        let ydot = dy1_norm_sq.sqrt();
        let ce3 = 0.5 * (ydot + (ydot * ydot + 4.0 * ce + 2.0 * (1.0 + 2.0 * gamma) * x_dist).sqrt());
        let ystar = dual_norm_sq(problem, steps, probs, &r.y_star).sqrt();
        let ce2 = ce + 0.5 * ydot * ydot + (1.0 + 2.0 * gamma) / 2.0 * x_dist + ystar * ce3;
        (Some(ce2), Some(ce3))
    } else {
        (None, None)
    };

    Ok(TheoryConstants {
        ce,
        ce1,
        ce2,
        ce3,
        delta0: d0,
        lipschitz,
        terms,
    })
}

/// Least-squares fit of `log(metric)` against the iteration index.
///
/// The slope is the empirical log-contraction per iteration; it stands in
/// for the linear rate guaranteed under metric subregularity, whose
/// constants are not estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Half-open index range of the fitted samples.
    pub window: (usize, usize),
    /// Nonpositive samples dropped from the window.
    pub excluded_nonpositive: usize,
    pub c1: Option<f64>,
}

impl RateModel {
    /// Per-iteration contraction factor `exp(slope)`.
    pub fn contraction(&self) -> f64 {
        self.slope.exp()
    }
}

/// Minimum number of positive samples for a rate fit.
pub const RATE_FIT_MIN_SAMPLES: usize = 10;

/// Fits a log-linear model on the decaying part of a metric series.
///
/// The window starts at the first sample at or below a tenth of the initial
/// value (the whole series if that never happens) and ends at the first
/// sample at or below `1e3·floor`, with `floor = 10·ε·initial`.
pub fn rate_fit(iters: &[f64], values: &[f64], c1: Option<f64>) -> Result<RateModel> {
    if iters.len() != values.len() {
        return Err(Error::dim("rate-fit series", iters.len(), values.len()));
    }
    let m0 = values
        .iter()
        .copied()
        .find(|v| *v > 0.0 && v.is_finite())
        .ok_or_else(|| Error::InvalidArgument("rate fit needs positive metric values".into()))?;
    let start = values.iter().position(|v| *v <= m0 / 10.0).unwrap_or(0);
    let floor = 10.0 * f64::EPSILON * m0;
    let end = values[start..]
        .iter()
        .position(|v| *v > 0.0 && *v <= 1e3 * floor)
        .map(|j| start + j + 1)
        .unwrap_or(values.len());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = 0;
    for j in start..end {
        if values[j] > 0.0 && values[j].is_finite() {
            xs.push(iters[j]);
            ys.push(values[j].ln());
        } else {
            excluded += 1;
        }
    }
    if xs.len() < RATE_FIT_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least {RATE_FIT_MIN_SAMPLES} positive samples in the window, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateModel {
        slope,
        intercept,
        r_squared,
        window: (start, end),
        excluded_nonpositive: excluded,
        c1,
    })
}

/// Both sides of the one-step inequality
/// `D_g(x^k; z) + D_{f*}(ŷ^{k+1}; z) ≤ V_k(x^{k−1} − x, y^k − y) − E_k[V_{k+1}(x^k − x, y^{k+1} − y)] − V(z^k − z^{k−1})`
/// with the conditional expectation enumerated over the drawn block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl DescentCheck {
    /// `rhs − lhs`, nonnegative when the inequality holds.
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

pub fn descent_inequality(
    problem: &SaddleProblem,
    steps: &StepSizes,
    probs: &[f64],
    probe: &IterationProbe,
    x: &[f64],
    y: &[f64],
) -> Result<DescentCheck> {
    let lhs = bregman_dg(problem, &probe.x, x, y)? + bregman_dfstar(problem, &probe.y_hat, x, y)?;

    let dx_prev = linalg::sub(&probe.x_prev, x);
    let dy_k = linalg::sub(&probe.y, y);
    let ydiff_k = linalg::sub(&probe.y, &probe.y_prev);
    let vk = lyapunov_vk(problem, steps, probs, &dx_prev, &dy_k, &ydiff_k)?;

    let dx = linalg::sub(&probe.x, x);
    let mut expected = 0.0;
    let mut y_next = probe.y.clone();
    for i in 0..problem.n_blocks() {
        let rows = problem.a.block_rows(i);
        y_next[rows.clone()].copy_from_slice(&probe.y_hat[rows.clone()]);
        let dy = linalg::sub(&y_next, y);
        let ydiff = linalg::sub(&y_next, &probe.y);
        expected += probs[i] * lyapunov_vk(problem, steps, probs, &dx, &dy, &ydiff)?;
        y_next[rows.clone()].copy_from_slice(&probe.y[rows]);
    }

    let step_x = linalg::sub(&probe.x, &probe.x_prev);
    let v = lyapunov_v(problem, steps, probs, &step_x, &ydiff_k)?;
    Ok(DescentCheck {
        lhs,
        rhs: vk - expected - v,
    })
}
