use std::collections::BTreeMap;
use std::fs;

use spdhg::diagnostics::Metric;
use spdhg::harness::{self, ExperimentConfig, Method, ProblemSource, SolverConfig};
use spdhg::problems::{GeneratorSpec, ProblemKind};

fn lasso_config(n: usize, p: usize, seed: u64) -> ExperimentConfig {
    let mut spec = GeneratorSpec::new(ProblemKind::Lasso, n, p);
    spec.lambda = 0.1;
    spec.seed = seed;
    let mut cfg = ExperimentConfig::new(ProblemSource::Generated(spec));
    cfg.seeds = vec![seed];
    cfg
}

#[test]
fn small_lasso_passes_every_check() {
    let mut cfg = lasso_config(3, 4, 7);
    cfg.check.mc_draws = 20_000;
    let report = harness::check_properties(&cfg).unwrap();
    assert!(report.passed(), "{}", report.summary());
    assert!(report.warnings.is_empty());
    for name in ["descent", "v_lower_bound", "vk_lower_bound"] {
        let o = report.outcomes.iter().find(|o| o.name == name).unwrap();
        assert!(o.checked > 0 && !o.skipped, "{name}");
    }
    assert!(report.outcomes.iter().any(|o| o.name.starts_with("identity_mc")));
}

#[test]
fn single_block_reduces_to_pdhg_and_passes() {
    let cfg = lasso_config(1, 4, 2);
    let report = harness::check_properties(&cfg).unwrap();
    assert!(report.passed(), "{}", report.summary());
}

#[test]
fn oversized_tau_skips_the_bounds_with_a_warning() {
    let mut cfg = lasso_config(3, 4, 5);
    cfg.check.tau_scale = 1.5;
    let report = harness::check_properties(&cfg).unwrap();
    assert!(!report.warnings.is_empty());
    for name in ["v_lower_bound", "vk_lower_bound"] {
        let o = report.outcomes.iter().find(|o| o.name == name).unwrap();
        assert!(o.skipped && o.checked == 0, "{name}");
    }
    // the one-step inequality does not depend on the step condition
    let d = report.outcomes.iter().find(|o| o.name == "descent").unwrap();
    assert_eq!(d.failures, 0, "{}", report.summary());
}

fn ridge_run_config(dir: &std::path::Path) -> ExperimentConfig {
    let mut spec = GeneratorSpec::new(ProblemKind::Ridge, 12, 8);
    spec.lambda = 0.5;
    spec.seed = 3;
    let mut cfg = ExperimentConfig::new(ProblemSource::Generated(spec));
    cfg.solvers = vec![SolverConfig::new(Method::Spdhg), SolverConfig::new(Method::Pdhg)];
    cfg.seeds = vec![0, 1, 2];
    cfg.max_epochs = 20.0;
    cfg.metrics = vec![Metric::KktResidual, Metric::DistToRef];
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn aggregate_means_match_per_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ridge_run_config(dir.path());
    let out = harness::run_experiment(&cfg).unwrap();
    assert_eq!(out.trajectories.len(), 6);

    // (method, iter) -> per-seed kkt values, read straight from the per-seed CSVs
    let mut per_seed: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for t in &out.metadata.trajectories {
        let mut rdr = csv::Reader::from_path(dir.path().join(&t.file)).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
        assert_eq!(&header[..4], ["iter", "epoch", "seed", "method"]);
        let col = header.iter().position(|h| h == "kkt_residual").unwrap();
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let v: f64 = rec[col].parse().unwrap();
            per_seed.entry((rec[3].to_string(), rec[0].parse().unwrap())).or_default().push(v);
        }
    }

    let mut rdr = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    let col = header.iter().position(|h| h == "kkt_residual_mean").unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let key = (rec[0].to_string(), rec[1].parse::<u64>().unwrap());
        let vals = &per_seed[&key];
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let got: f64 = rec[col].parse().unwrap();
        assert!((got - mean).abs() <= 1e-15 * mean.abs().max(1e-300), "{key:?}: {got} vs {mean}");
        rows += 1;
    }
    assert_eq!(rows, per_seed.len());
}

#[test]
fn run_json_is_enough_to_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ridge_run_config(dir.path());
    harness::run_experiment(&cfg).unwrap();
    assert!(fs::read_to_string(dir.path().join("plot.svg")).unwrap().starts_with("<svg"));

    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert!(meta["version"].as_str().unwrap().starts_with("spdhg "));
    assert_eq!(meta["seeds"], serde_json::json!([0, 1, 2]));
    let echoed = ExperimentConfig::from_toml(meta["config"].as_str().unwrap()).unwrap();
    assert_eq!(echoed.problem, cfg.problem);
    for s in meta["solvers"].as_array().unwrap() {
        assert!(s["tau"].as_f64().unwrap() > 0.0);
        assert!(!s["sigma"].as_array().unwrap().is_empty());
    }

    let replayed = harness::replay(&dir.path().join("run.json"), "spdhg", 1).unwrap();
    let logged = harness::read_trajectory_csv(&dir.path().join(harness::trajectory_file("spdhg", 1))).unwrap();
    assert_eq!(replayed.len(), logged.len());
    for (r, l) in replayed.iter().zip(&logged) {
        assert_eq!(r.iter, l.iter);
        assert_eq!(r.get(Metric::KktResidual).unwrap().to_bits(), l.get("kkt_residual").unwrap().to_bits());
    }
}

#[test]
fn zero_epochs_logs_nothing_but_writes_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ridge_run_config(dir.path());
    cfg.max_epochs = 0.0;
    let out = harness::run_experiment(&cfg).unwrap();
    assert!(out.trajectories.iter().all(|t| t.log.is_empty() && t.error.is_none()));
    assert!(dir.path().join("run.json").exists());
    assert!(dir.path().join("aggregate.csv").exists());
}

#[test]
fn file_source_matches_the_generated_problem() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ridge_run_config(dir.path());
    let inst = harness::build_instance(&gen).unwrap();
    spdhg::problems::write_libsvm(&dir.path().join("ridge.svm"), &inst.data).unwrap();

    let cfg_path = dir.path().join("file.toml");
    fs::write(
        &cfg_path,
        "[problem]\nfile = \"ridge.svm\"\nkind = \"ridge\"\nlambda = 0.5\np = 8\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let loaded = harness::build_instance(&cfg).unwrap();
    assert_eq!(loaded.data.p, inst.data.p);
    assert_eq!(loaded.problem.a.block_norms(), inst.problem.a.block_norms());
    assert_eq!(loaded.lambda, inst.lambda);
}
