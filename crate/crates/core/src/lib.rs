//! Stochastic primal-dual hybrid gradient (SPDHG) for convex saddle-point
//! problems of the form
//!
//! ```text
//!     min_x  Σᵢ fᵢ(Aᵢ x) + g(x)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! - [`linops`]: block-row sparse operator `A` with per-block apply/adjoint
//!   and cached spectral norms.
//! - [`funcs`]: proximable functions (values, proxes, conjugates,
//!   subdifferential distances).
//! - [`sampling`]: counter-based block sampler and the conditional
//!   expectation identities of the dual update.
//! - [`solver`]: SPDHG, deterministic PDHG, SPDHG-μ and the FB-VC-CD, SVRG and
//!   SDCA baselines.
//! - [`diagnostics`]: Bregman distances, Lyapunov forms, KKT residual, gaps,
//!   theory constants and empirical rate fits.
//! - [`problems`]: synthetic generators and LIBSVM ingestion.
//! - [`harness`]: experiment configs, reference certification, CSV/JSON/SVG
//!   output and the property-check suite.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod diagnostics;
pub mod error;
pub mod funcs;
pub mod harness;
pub mod linalg;
pub mod linops;
pub mod problems;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
pub use funcs::{ProxableFunction, SeparableSum, Step};
pub use linops::BlockLinearOperator;
pub use sampling::SamplerSpec;
pub use solver::{ReferenceSolution, SaddleProblem, SolverState, StepSizes};
