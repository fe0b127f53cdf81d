//! Recover a sparse vector from random Gaussian measurements.
//!
//! `cargo run --release --example basis_pursuit`

use spdhg::diagnostics::Metric;
use spdhg::harness;
use spdhg::problems::{self, GeneratorSpec};
use spdhg::solver::{self, RunConfig};
use spdhg::SamplerSpec;

fn main() -> spdhg::Result<()> {
    let spec = GeneratorSpec::basis_pursuit_desk(0);
    let g = problems::generate(&spec)?;
    let reference = harness::pdhg_oracle(&g.problem, 1e-12, 2_000_000)?;
    println!("reference: {} (kkt {:.2e})", reference.provenance, reference.kkt_residual);
    let problem = g.problem.with_reference(reference)?;

    let n = problem.n_blocks() as u64;
    let sampler = SamplerSpec::uniform(problem.n_blocks(), 1);
    let steps = solver::default_step_sizes(&problem.a, 0.99, &sampler)?;
    let config = RunConfig::new(500 * n, 50 * n)
        .with_metrics(&[Metric::Feasibility, Metric::DistToRef])
        .with_stop(Metric::DistToRef, 1e-8);
    let out = solver::run(&problem, &steps, &sampler, &config)?;

    println!("{:>8} {:>12} {:>12}", "epoch", "‖Ax-b‖", "‖x-x*‖");
    for r in &out.log {
        println!(
            "{:>8.0} {:>12.3e} {:>12.3e}",
            r.epoch,
            r.get(Metric::Feasibility).unwrap(),
            r.get(Metric::DistToRef).unwrap()
        );
    }
    let planted = g.x_planted.unwrap();
    let err: f64 = out.state.x.iter().zip(&planted).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    println!("distance to the planted vector: {err:.3e}");
    Ok(())
}
