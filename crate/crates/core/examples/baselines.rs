//! Compare SPDHG with PDHG, SPDHG-μ, FB-VC-CD, SVRG and SDCA on ridge
//! regression, in epochs needed to reach a distance of 1e-6 to the solution.

use spdhg::diagnostics::Metric;
use spdhg::harness;
use spdhg::problems::{self, GeneratorSpec, ProblemKind};
use spdhg::solver::{self, RunConfig, RunOutput, SvrgOptions};
use spdhg::SamplerSpec;

fn epochs_to(out: &RunOutput, tol: f64) -> String {
    out.log
        .iter()
        .find(|r| r.get(Metric::DistToRef).unwrap() <= tol)
        .map(|r| format!("{:.0}", r.epoch))
        .unwrap_or_else(|| "-".into())
}

fn main() -> spdhg::Result<()> {
    let mut spec = GeneratorSpec::new(ProblemKind::Ridge, 100, 50);
    spec.lambda = 0.1;
    let g = problems::generate(&spec)?;
    let reference = harness::pdhg_oracle(&g.problem, 1e-12, 1_000_000)?;
    let p = g.problem.with_reference(reference)?;
    let n = p.n_blocks() as u64;
    let s = SamplerSpec::uniform(p.n_blocks(), 0);
    let metrics = [Metric::DistToRef];
    let cfg = RunConfig::new(300 * n, n / 4).with_metrics(&metrics).with_stop(Metric::DistToRef, 1e-6);
    let tol = 1e-6;

    let steps = solver::default_step_sizes(&p.a, 0.99, &s)?;
    let rows = [
        ("spdhg", solver::run(&p, &steps, &s, &cfg)?),
        ("pdhg", solver::pdhg_run(&p, None, 0.99, &RunConfig::new(300, 1).with_metrics(&metrics).with_stop(Metric::DistToRef, tol))?),
        ("spdhg_mu", solver::spdhg_mu_run(&p, 0.99, &s, &cfg)?.0),
        ("fb_vc_cd", solver::fb_vc_cd_run(&p, 0.99, &s, &cfg)?),
        ("svrg", solver::svrg_run(&p, &s, SvrgOptions::default(), &cfg)?),
        ("sdca", solver::sdca_run(&p, &s, &cfg)?),
    ];
    for (name, out) in &rows {
        let last = out.log.last().unwrap();
        println!(
            "{name:>9}: epochs to {tol:.0e}: {:>4}   final {:.2e} at epoch {:.0}",
            epochs_to(out, tol),
            last.get(Metric::DistToRef).unwrap(),
            last.epoch
        );
    }
    Ok(())
}
