//! Run the property suite on a small random Lasso, then again with a step
//! size that breaks the step condition.

use spdhg::harness::{self, ExperimentConfig, ProblemSource};
use spdhg::problems::{GeneratorSpec, ProblemKind};

fn main() -> spdhg::Result<()> {
    let mut spec = GeneratorSpec::new(ProblemKind::Lasso, 3, 4);
    spec.lambda = 0.1;
    let mut cfg = ExperimentConfig::new(ProblemSource::Generated(spec));
    cfg.seeds = vec![0, 1];
    cfg.check.mc_draws = 50_000;
    let report = harness::check_properties(&cfg)?;
    print!("{}", report.summary());
    println!("passed: {}\n", report.passed());

    cfg.check.tau_scale = 1.5;
    cfg.check.mc_draws = 0;
    let report = harness::check_properties(&cfg)?;
    print!("{}", report.summary());
    Ok(())
}
