//! Proximable convex functions.
//!
//! Every catalog entry is separable across coordinates, so proxes accept a
//! diagonal step as well as a scalar one. Extended-real values are plain
//! `f64` with `+inf` outside the domain.
//!
//! Conjugate proxes are closed forms; the Moreau identity
//! `prox_{σf*}(v) = v − σ·prox_{σ⁻¹f}(v/σ)` ties them to the primal proxes
//! and is checked in the tests below.

use std::ops::Range;

use crate::error::{Error, Result};

/// A prox step: one positive scalar, or one positive entry per coordinate.
#[derive(Debug, Clone, Copy)]
pub enum Step<'a> {
    Scalar(f64),
    Diagonal(&'a [f64]),
}

impl Step<'_> {
    #[inline]
    fn at(&self, j: usize) -> f64 {
        match self {
            Step::Scalar(s) => *s,
            Step::Diagonal(d) => d[j],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Step::Scalar(s) if *s > 0.0 && s.is_finite() => Ok(()),
            Step::Scalar(s) => Err(Error::InvalidArgument(format!(
                "prox step must be positive and finite, got {s}"
            ))),
            Step::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::dim("diagonal step", dim, d.len()));
                }
                if d.iter().all(|s| *s > 0.0 && s.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(
                        "diagonal prox step must be positive and finite".into(),
                    ))
                }
            }
        }
    }
}

impl From<f64> for Step<'_> {
    fn from(s: f64) -> Self {
        Step::Scalar(s)
    }
}

impl<'a> From<&'a [f64]> for Step<'a> {
    fn from(d: &'a [f64]) -> Self {
        Step::Diagonal(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionKind {
    Zero,
    /// `λ‖x‖₁`
    L1 { lambda: f64 },
    /// `(λ/2)‖x‖²`
    SquaredL2 { lambda: f64 },
    /// `δ_b`
    IndicatorPoint { b: Vec<f64> },
    /// `½‖x − b‖²`
    LeastSquares { b: Vec<f64> },
    /// `Σ_j c·max(0, 1 − s·x_j)`
    Hinge { c: f64, sign: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxableFunction {
    kind: FunctionKind,
    strong_convexity: Option<f64>,
    conj_strong_convexity: Option<f64>,
    lipschitz: Option<f64>,
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[inline]
fn dist_to_interval(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

impl ProxableFunction {
    pub fn zero() -> Self {
        Self {
            kind: FunctionKind::Zero,
            strong_convexity: Some(0.0),
            conj_strong_convexity: None,
            lipschitz: Some(0.0),
        }
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("L1 weight must be >= 0, got {lambda}")));
        }
        Ok(Self {
            kind: FunctionKind::L1 { lambda },
            strong_convexity: Some(0.0),
            conj_strong_convexity: Some(0.0),
            lipschitz: Some(lambda),
        })
    }

    pub fn squared_l2(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "squared-L2 weight must be >= 0, got {lambda}"
            )));
        }
        Ok(Self {
            kind: FunctionKind::SquaredL2 { lambda },
            strong_convexity: Some(lambda),
            conj_strong_convexity: (lambda > 0.0).then(|| 1.0 / lambda),
            lipschitz: None,
        })
    }

    pub fn indicator_point(b: Vec<f64>) -> Self {
        Self {
            kind: FunctionKind::IndicatorPoint { b },
            strong_convexity: None,
            conj_strong_convexity: Some(0.0),
            lipschitz: None,
        }
    }

    pub fn least_squares(b: Vec<f64>) -> Self {
        Self {
            kind: FunctionKind::LeastSquares { b },
            strong_convexity: Some(1.0),
            conj_strong_convexity: Some(1.0),
            lipschitz: None,
        }
    }

    /// `c·max(0, 1 − s·t)` per coordinate, `c > 0`, `s = ±1`.
    pub fn hinge(c: f64, sign: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("hinge weight must be > 0, got {c}")));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidArgument(format!("hinge sign must be ±1, got {sign}")));
        }
        Ok(Self {
            kind: FunctionKind::Hinge { c, sign },
            strong_convexity: Some(0.0),
            conj_strong_convexity: Some(0.0),
            lipschitz: Some(c),
        })
    }

    pub fn kind(&self) -> &FunctionKind {
        &self.kind
    }

    /// Strong convexity modulus of the function itself.
    pub fn strong_convexity(&self) -> Option<f64> {
        self.strong_convexity
    }

    /// Strong convexity modulus of the conjugate.
    pub fn conj_strong_convexity(&self) -> Option<f64> {
        self.conj_strong_convexity
    }

    /// Lipschitz constant per coordinate (`None` when not Lipschitz).
    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn with_strong_convexity(mut self, mu: Option<f64>) -> Self {
        self.strong_convexity = mu;
        self
    }

    pub fn with_conj_strong_convexity(mut self, mu: Option<f64>) -> Self {
        self.conj_strong_convexity = mu;
        self
    }

    /// Dimension fixed by the parameters, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match &self.kind {
            FunctionKind::IndicatorPoint { b } | FunctionKind::LeastSquares { b } => Some(b.len()),
            _ => None,
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        match self.fixed_dim() {
            Some(d) if d != len => Err(Error::dim("function argument", d, len)),
            _ => Ok(()),
        }
    }

    /// Whether `f` is finite everywhere.
    pub fn is_finite_valued(&self) -> bool {
        !matches!(self.kind, FunctionKind::IndicatorPoint { .. })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        if self.check_dim(x.len()).is_err() {
            return f64::INFINITY;
        }
        match &self.kind {
            FunctionKind::Zero => 0.0,
            FunctionKind::L1 { lambda } => lambda * x.iter().map(|v| v.abs()).sum::<f64>(),
            FunctionKind::SquaredL2 { lambda } => 0.5 * lambda * x.iter().map(|v| v * v).sum::<f64>(),
            FunctionKind::IndicatorPoint { b } => {
                if x == b.as_slice() {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            FunctionKind::LeastSquares { b } => {
                0.5 * x.iter().zip(b).map(|(v, bj)| (v - bj) * (v - bj)).sum::<f64>()
            }
            FunctionKind::Hinge { c, sign } => {
                c * x.iter().map(|v| (1.0 - sign * v).max(0.0)).sum::<f64>()
            }
        }
    }

    pub fn conj_value(&self, y: &[f64]) -> f64 {
        if self.check_dim(y.len()).is_err() {
            return f64::INFINITY;
        }
        let zero_indicator = |y: &[f64]| {
            if y.iter().all(|v| *v == 0.0) {
                0.0
            } else {
                f64::INFINITY
            }
        };
        match &self.kind {
            FunctionKind::Zero => zero_indicator(y),
            FunctionKind::L1 { lambda } => {
                if y.iter().all(|v| v.abs() <= *lambda) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            FunctionKind::SquaredL2 { lambda } => {
                if *lambda == 0.0 {
                    zero_indicator(y)
                } else {
                    y.iter().map(|v| v * v).sum::<f64>() / (2.0 * lambda)
                }
            }
            FunctionKind::IndicatorPoint { b } => y.iter().zip(b).map(|(v, bj)| v * bj).sum(),
            FunctionKind::LeastSquares { b } => {
                y.iter().zip(b).map(|(v, bj)| 0.5 * v * v + bj * v).sum()
            }
            FunctionKind::Hinge { c, sign } => {
                let mut total = 0.0;
                for v in y {
                    let w = sign * v;
                    if !(-c..=0.0).contains(&w) {
                        return f64::INFINITY;
                    }
                    total += w;
                }
                total
            }
        }
    }

    /// Coordinate `j` of `prox_{t f}(v)`.
    #[inline]
    fn prox_coord(&self, j: usize, v: f64, t: f64) -> f64 {
        match &self.kind {
            FunctionKind::Zero => v,
            FunctionKind::L1 { lambda } => soft_threshold(v, t * lambda),
            FunctionKind::SquaredL2 { lambda } => v / (1.0 + t * lambda),
            FunctionKind::IndicatorPoint { b } => b[j],
            FunctionKind::LeastSquares { b } => (v + t * b[j]) / (1.0 + t),
            FunctionKind::Hinge { c, sign } => {
                let w = sign * v;
                let w = if w < 1.0 - t * c {
                    w + t * c
                } else if w <= 1.0 {
                    1.0
                } else {
                    w
                };
                sign * w
            }
        }
    }

    /// Coordinate `j` of `prox_{s f*}(v)`.
    #[inline]
    fn conj_prox_coord(&self, j: usize, v: f64, s: f64) -> f64 {
        match &self.kind {
            FunctionKind::Zero => 0.0,
            FunctionKind::L1 { lambda } => v.clamp(-lambda, *lambda),
            FunctionKind::SquaredL2 { lambda } => v * lambda / (lambda + s),
            FunctionKind::IndicatorPoint { b } => v - s * b[j],
            FunctionKind::LeastSquares { b } => (v - s * b[j]) / (1.0 + s),
            FunctionKind::Hinge { c, sign } => sign * (sign * v - s).clamp(-c, 0.0),
        }
    }

    /// `argmin_u f(u) + ½‖u − v‖²_{step⁻¹}`.
    pub fn prox<'a>(&self, v: &[f64], step: impl Into<Step<'a>>) -> Result<Vec<f64>> {
        let step = step.into();
        step.validate(v.len())?;
        self.check_dim(v.len())?;
        let mut out = vec![0.0; v.len()];
        self.prox_into(v, step, &mut out);
        Ok(out)
    }

    /// Unchecked prox; `step` must be positive and `out.len() == v.len()`.
    #[inline]
    pub fn prox_into(&self, v: &[f64], step: Step<'_>, out: &mut [f64]) {
        for (j, (o, &vj)) in out.iter_mut().zip(v).enumerate() {
            *o = self.prox_coord(j, vj, step.at(j));
        }
    }

    /// `prox_{step·f*}(v)`.
    pub fn conj_prox<'a>(&self, v: &[f64], step: impl Into<Step<'a>>) -> Result<Vec<f64>> {
        let step = step.into();
        step.validate(v.len())?;
        self.check_dim(v.len())?;
        let mut out = vec![0.0; v.len()];
        self.conj_prox_into(v, step, &mut out);
        Ok(out)
    }

    #[inline]
    pub fn conj_prox_into(&self, v: &[f64], step: Step<'_>, out: &mut [f64]) {
        for (j, (o, &vj)) in out.iter_mut().zip(v).enumerate() {
            *o = self.conj_prox_coord(j, vj, step.at(j));
        }
    }

    /// `dist(v, ∂f(x))`; errors when `x ∉ dom f`.
    pub fn subdiff_dist(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        if x.len() != v.len() {
            return Err(Error::dim("subgradient", x.len(), v.len()));
        }
        self.check_dim(x.len())?;
        let sq: f64 = match &self.kind {
            FunctionKind::Zero => v.iter().map(|a| a * a).sum(),
            FunctionKind::L1 { lambda } => x
                .iter()
                .zip(v)
                .map(|(&xj, &vj)| {
                    let d = if xj != 0.0 {
                        (vj - lambda * xj.signum()).abs()
                    } else {
                        dist_to_interval(vj, -lambda, *lambda)
                    };
                    d * d
                })
                .sum(),
            FunctionKind::SquaredL2 { lambda } => x
                .iter()
                .zip(v)
                .map(|(&xj, &vj)| (vj - lambda * xj).powi(2))
                .sum(),
            FunctionKind::IndicatorPoint { b } => {
                if x != b.as_slice() {
                    return Err(Error::Infeasible("indicator evaluated away from its point".into()));
                }
                0.0
            }
            FunctionKind::LeastSquares { b } => x
                .iter()
                .zip(v)
                .zip(b)
                .map(|((&xj, &vj), &bj)| (vj - (xj - bj)).powi(2))
                .sum(),
            FunctionKind::Hinge { c, sign } => x
                .iter()
                .zip(v)
                .map(|(&xj, &vj)| {
                    let w = sign * xj;
                    let u = sign * vj;
                    let d = if w < 1.0 {
                        (u + c).abs()
                    } else if w == 1.0 {
                        dist_to_interval(u, -c, 0.0)
                    } else {
                        u.abs()
                    };
                    d * d
                })
                .sum(),
        };
        Ok(sq.sqrt())
    }

    /// `dist(v, ∂f*(y))`; errors when `y ∉ dom f*`.
    pub fn conj_subdiff_dist(&self, y: &[f64], v: &[f64]) -> Result<f64> {
        if y.len() != v.len() {
            return Err(Error::dim("conjugate subgradient", y.len(), v.len()));
        }
        self.check_dim(y.len())?;
        let outside = || Error::Infeasible("point outside dom f*".into());
        let sq: f64 = match &self.kind {
            FunctionKind::Zero => {
                if y.iter().any(|a| *a != 0.0) {
                    return Err(outside());
                }
                0.0
            }
            FunctionKind::SquaredL2 { lambda } if *lambda == 0.0 => {
                if y.iter().any(|a| *a != 0.0) {
                    return Err(outside());
                }
                0.0
            }
            FunctionKind::L1 { lambda } => {
                let mut acc = 0.0;
                for (&yj, &vj) in y.iter().zip(v) {
                    if yj.abs() > *lambda {
                        return Err(outside());
                    }
                    // normal cone of [−λ, λ] at yj
                    let lo = if yj == -lambda { f64::NEG_INFINITY } else { 0.0 };
                    let hi = if yj == *lambda { f64::INFINITY } else { 0.0 };
                    acc += dist_to_interval(vj, lo, hi).powi(2);
                }
                acc
            }
            FunctionKind::SquaredL2 { lambda } => y
                .iter()
                .zip(v)
                .map(|(&yj, &vj)| (vj - yj / lambda).powi(2))
                .sum(),
            FunctionKind::IndicatorPoint { b } => {
                v.iter().zip(b).map(|(&vj, &bj)| (vj - bj).powi(2)).sum()
            }
            FunctionKind::LeastSquares { b } => y
                .iter()
                .zip(v)
                .zip(b)
                .map(|((&yj, &vj), &bj)| (vj - (yj + bj)).powi(2))
                .sum(),
            FunctionKind::Hinge { c, sign } => {
                let mut acc = 0.0;
                for (&yj, &vj) in y.iter().zip(v) {
                    let w = sign * yj;
                    if !(-c..=0.0).contains(&w) {
                        return Err(outside());
                    }
                    let u = sign * vj;
                    // ∂h*(w) = 1 + N_[−c,0](w)
                    let lo = if w == -c { f64::NEG_INFINITY } else { 1.0 };
                    let hi = if w == 0.0 { f64::INFINITY } else { 1.0 };
                    acc += dist_to_interval(u, lo, hi).powi(2);
                }
                acc
            }
        };
        Ok(sq.sqrt())
    }
}

/// `f(y) = Σ_i f_i(y_i)` over contiguous coordinate pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSum {
    pieces: Vec<ProxableFunction>,
    offsets: Vec<usize>,
}

impl SeparableSum {
    pub fn new(pieces: Vec<ProxableFunction>, dims: &[usize]) -> Result<Self> {
        if pieces.len() != dims.len() {
            return Err(Error::dim("separable pieces", dims.len(), pieces.len()));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        for (f, &d) in pieces.iter().zip(dims) {
            if let Some(fd) = f.fixed_dim() {
                if fd != d {
                    return Err(Error::dim("separable piece", d, fd));
                }
            }
            offsets.push(offsets.last().unwrap() + d);
        }
        Ok(Self { pieces, offsets })
    }

    /// The same function on every piece.
    pub fn repeated(f: ProxableFunction, dims: &[usize]) -> Result<Self> {
        Self::new(vec![f; dims.len()], dims)
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, i: usize) -> &ProxableFunction {
        &self.pieces[i]
    }

    pub fn pieces(&self) -> &[ProxableFunction] {
        &self.pieces
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn piece_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Pieces exactly covering the coordinate range `rows`, if aligned.
    pub fn pieces_covering(&self, rows: Range<usize>) -> Option<Range<usize>> {
        let start = self.offsets.binary_search(&rows.start).ok()?;
        let end = self.offsets.binary_search(&rows.end).ok()?;
        Some(start..end)
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        if y.len() != self.dim() {
            return f64::INFINITY;
        }
        self.pieces
            .iter()
            .enumerate()
            .map(|(i, f)| f.value(&y[self.piece_range(i)]))
            .sum()
    }

    pub fn conj_value(&self, y: &[f64]) -> f64 {
        if y.len() != self.dim() {
            return f64::INFINITY;
        }
        self.pieces
            .iter()
            .enumerate()
            .map(|(i, f)| f.conj_value(&y[self.piece_range(i)]))
            .sum()
    }

    /// Conjugate prox applied to pieces `pieces` whose coordinates are
    /// `v` (indexed relative to the first piece's offset).
    #[inline]
    pub(crate) fn conj_prox_pieces_into(
        &self,
        pieces: Range<usize>,
        v: &[f64],
        step: f64,
        out: &mut [f64],
    ) {
        let base = self.offsets[pieces.start];
        for i in pieces {
            let r = self.offsets[i] - base..self.offsets[i + 1] - base;
            self.pieces[i].conj_prox_into(&v[r.clone()], Step::Scalar(step), &mut out[r]);
        }
    }

    /// Blockwise conjugate prox with one step per piece.
    pub fn conj_prox(&self, v: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::dim("dual vector", self.dim(), v.len()));
        }
        if steps.len() != self.len() {
            return Err(Error::dim("piece steps", self.len(), steps.len()));
        }
        let mut out = vec![0.0; v.len()];
        for (i, f) in self.pieces.iter().enumerate() {
            let r = self.piece_range(i);
            Step::Scalar(steps[i]).validate(r.len())?;
            f.conj_prox_into(&v[r.clone()], Step::Scalar(steps[i]), &mut out[r]);
        }
        Ok(out)
    }

    /// `sqrt(Σ_i w_i · dist(v_i, ∂f_i*(y_i))²)` with per-piece weights.
    pub fn conj_subdiff_dist_weighted(&self, y: &[f64], v: &[f64], weights: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (i, f) in self.pieces.iter().enumerate() {
            let r = self.piece_range(i);
            let d = f.conj_subdiff_dist(&y[r.clone()], &v[r])?;
            acc += weights[i] * d * d;
        }
        Ok(acc.sqrt())
    }
}
