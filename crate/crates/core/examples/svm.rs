//! Hinge-loss SVM through its saddle-point form.

use spdhg::diagnostics::{self, KktWeighting, Metric};
use spdhg::problems::{self, GeneratorSpec, ProblemKind};
use spdhg::solver::{self, RunConfig};
use spdhg::SamplerSpec;

fn main() -> spdhg::Result<()> {
    let mut spec = GeneratorSpec::new(ProblemKind::SvmHinge, 200, 20);
    spec.lambda = 0.1;
    spec.seed = 3;
    let g = problems::generate(&spec)?;
    let p = g.problem;
    let s = SamplerSpec::uniform(p.n_blocks(), 0);
    let steps = solver::default_step_sizes(&p.a, 0.99, &s)?;
    let n = p.n_blocks() as u64;
    let out = solver::run(&p, &steps, &s, &RunConfig::new(200 * n, 20 * n).with_metrics(&[Metric::KktResidual]))?;
    for r in &out.log {
        println!("epoch {:>4.0}  kkt {:.3e}", r.epoch, r.get(Metric::KktResidual).unwrap());
    }

    let x = &out.state.x;
    let margins = g.data.rows.iter().zip(&g.data.targets).filter(|(row, b)| {
        let ax: f64 = row.iter().map(|(j, v)| v * x[*j]).sum();
        ax * **b > 0.0
    });
    println!("training accuracy {:.3}", margins.count() as f64 / g.data.n() as f64);
    println!("objective {:.6}", p.objective(x));
    println!(
        "euclidean kkt {:.3e}",
        diagnostics::kkt_residual(&p, x, &out.state.y, KktWeighting::Euclidean)?
    );
    Ok(())
}
