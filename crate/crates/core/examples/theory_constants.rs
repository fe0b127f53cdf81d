//! Evaluate the constants of the ergodic O(1/K) bounds and compare them with
//! what a run actually achieves.

use spdhg::diagnostics::{self, Metric};
use spdhg::harness;
use spdhg::problems::{self, GeneratorSpec};
use spdhg::solver::{self, RunConfig};
use spdhg::SamplerSpec;

fn main() -> spdhg::Result<()> {
    let g = problems::generate(&GeneratorSpec::basis_pursuit_desk(0))?;
    let r = harness::pdhg_oracle(&g.problem, 1e-12, 2_000_000)?;
    let p = g.problem.with_reference(r)?;
    let s = SamplerSpec::uniform(p.n_blocks(), 0);
    let steps = solver::default_step_sizes(&p.a, 0.99, &s)?;
    let x0 = vec![0.0; p.primal_dim()];
    let y0 = vec![0.0; p.dual_dim()];
    let c = diagnostics::theory_constants(&p, &steps, s.probs(), &x0, &y0)?;
    println!("Delta0 = {:.4e}", c.delta0);
    for (name, v) in &c.terms {
        println!("  {name:<28} {v:+.4e}");
    }
    println!("C_e = {:.4e}  C_e2 = {:?}  C_e3 = {:?}", c.ce, c.ce2, c.ce3);

    let cfg = RunConfig::new(10_000, 1000).with_metrics(&[Metric::FeasibilityAvgWeighted, Metric::ObjectiveResidualAvg]);
    let out = solver::run(&p, &steps, &s, &cfg)?;
    println!("{:>7} {:>12} {:>12} {:>12}", "K", "feas(avg)", "C_e3/K", "|obj(avg)|");
    for rec in &out.log {
        let k = rec.iter as f64;
        println!(
            "{:>7} {:>12.3e} {:>12.3e} {:>12.3e}",
            rec.iter,
            rec.get(Metric::FeasibilityAvgWeighted).unwrap(),
            c.ce3.unwrap() / k,
            rec.get(Metric::ObjectiveResidualAvg).unwrap().abs()
        );
    }
    Ok(())
}
