//! Fit an empirical linear rate to the distance to the solution on Lasso.

use spdhg::diagnostics::{self, Metric};
use spdhg::harness;
use spdhg::problems::{self, GeneratorSpec, ProblemKind};
use spdhg::solver::{self, RunConfig};
use spdhg::SamplerSpec;

fn main() -> spdhg::Result<()> {
    let mut spec = GeneratorSpec::basis_pursuit_desk(2);
    spec.kind = ProblemKind::Lasso;
    spec.lambda_rel = Some(0.1);
    let g = problems::generate(&spec)?;
    let r = harness::pdhg_oracle(&g.problem, 1e-12, 2_000_000)?;
    let p = g.problem.with_reference(r)?;
    let n = p.n_blocks() as u64;
    let s = SamplerSpec::uniform(p.n_blocks(), 0);
    let steps = solver::default_step_sizes(&p.a, 0.99, &s)?;
    let cfg = RunConfig::new(2000 * n, n)
        .with_metrics(&[Metric::DistToRef])
        .with_stop(Metric::DistToRef, 1e-10);
    let out = solver::run(&p, &steps, &s, &cfg)?;
    let iters: Vec<f64> = out.log.iter().map(|r| r.iter as f64).collect();
    let values: Vec<f64> = out.log.iter().map(|r| r.get(Metric::DistToRef).unwrap()).collect();
    let fit = diagnostics::rate_fit(&iters, &values, Some(steps.c1()))?;
    println!("slope per iteration {:.4e}", fit.slope);
    println!("contraction per epoch {:.6}", fit.contraction().powf(n as f64));
    println!("r^2 {:.4} over samples {}..{}", fit.r_squared, fit.window.0, fit.window.1);
    Ok(())
}
