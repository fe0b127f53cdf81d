//! Acceptance criteria 1-10, one pass/fail line each.
//!
//! Every quantity with an independent definition (operator norms, Lyapunov
//! forms, Bregman distances, normal equations, grid suprema) is recomputed
//! here from dense data instead of through the library's own helpers.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spdhg::diagnostics::{self, Metric};
use spdhg::harness::{self, ExperimentConfig, ProblemSource, ReferenceConfig, ReferenceMode, SolverConfig};
use spdhg::linops::BlockLinearOperator;
use spdhg::problems::{self, GeneratorSpec, ProblemKind};
use spdhg::sampling::{self, DualUpdateSnapshot, ExpectationMode, SamplerSpec};
use spdhg::solver::{self, RunConfig, SaddleProblem, SolverState, StepSizes};
use spdhg::{ProxableFunction, SeparableSum};

const GAMMA: f64 = 0.99;

type Outcome = Result<String, String>;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Dense view of a block operator with its block ranges.
struct Dense {
    m: usize,
    p: usize,
    a: Vec<f64>,
    offsets: Vec<usize>,
}

impl Dense {
    fn of(op: &BlockLinearOperator) -> Self {
        Dense {
            m: op.dual_dim(),
            p: op.primal_dim(),
            a: op.to_dense(),
            offsets: op.block_offsets().to_vec(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m).map(|r| dot(&self.a[r * self.p..(r + 1) * self.p], x)).collect()
    }

    fn block_of(&self, r: usize) -> usize {
        self.offsets.partition_point(|&o| o <= r) - 1
    }

    fn block_spectral_norm(&self, i: usize) -> f64 {
        let rows = self.offsets[i]..self.offsets[i + 1];
        let mat = DMatrix::from_fn(rows.len(), self.p, |r, c| self.a[(rows.start + r) * self.p + c]);
        mat.singular_values().max()
    }

    /// `Σ_r y_r² / (σ_i p_i)` over the rows of each block.
    fn dual_sq(&self, steps: &StepSizes, probs: &[f64], y: &[f64]) -> f64 {
        (0..self.m)
            .map(|r| {
                let i = self.block_of(r);
                y[r] * y[r] / (steps.sigma()[i] * probs[i])
            })
            .sum()
    }

    fn cross(&self, probs: &[f64], dx: &[f64], dy: &[f64]) -> f64 {
        let ax = self.apply(dx);
        (0..self.m).map(|r| ax[r] * dy[r] / probs[self.block_of(r)]).sum()
    }

    fn v(&self, steps: &StepSizes, probs: &[f64], dx: &[f64], dy: &[f64]) -> f64 {
        0.5 * dot(dx, dx) / steps.tau() + 0.5 * self.dual_sq(steps, probs, dy) + self.cross(probs, dx, dy)
    }

    fn vk(&self, steps: &StepSizes, probs: &[f64], dx: &[f64], dy: &[f64], ydiff: &[f64]) -> f64 {
        0.5 * dot(dx, dx) / steps.tau() - self.cross(probs, dx, ydiff)
            + 0.5 * self.dual_sq(steps, probs, ydiff)
            + 0.5 * self.dual_sq(steps, probs, dy)
    }
}

fn random_operator(rng: &mut ChaCha8Rng, m: usize, p: usize, density: f64) -> Vec<Vec<(usize, f64)>> {
    (0..m)
        .map(|_| loop {
            let row: Vec<(usize, f64)> = (0..p)
                .filter_map(|j| (rng.gen::<f64>() < density).then(|| (j, gauss(rng))))
                .collect();
            if !row.is_empty() {
                break row;
            }
        })
        .collect()
}

fn random_partition(rng: &mut ChaCha8Rng, m: usize, max_block: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = m;
    while left > 0 {
        let s = rng.gen_range(1..=max_block.min(left));
        sizes.push(s);
        left -= s;
    }
    sizes
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// 1. step-size contract

fn criterion_1() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut worst_tight: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let m = rng.gen_range(2..40);
        let p = rng.gen_range(2..25);
        let density = if case % 2 == 0 { 1.0 } else { 0.3 };
        let rows = random_operator(&mut rng, m, p, density);
        let sizes = random_partition(&mut rng, m, 5);
        let op = BlockLinearOperator::from_sparse_rows(p, &rows)
            .and_then(|o| o.regrouped(&sizes))
            .map_err(|e| e.to_string())?;
        let n = op.n_blocks();
        let sampler = if case % 3 == 0 {
            SamplerSpec::new(random_probs(&mut rng, n), case).map_err(|e| e.to_string())?
        } else {
            SamplerSpec::uniform(n, case)
        };
        let steps = solver::default_step_sizes(&op, GAMMA, &sampler).map_err(|e| e.to_string())?;
        let dense = Dense::of(&op);
        let norms: Vec<f64> = (0..n).map(|i| op.block_norm(i)).collect();
        for (i, nrm) in norms.iter().enumerate() {
            let svd = dense.block_spectral_norm(i);
            worst_norm = worst_norm.max((nrm - svd).abs() / svd);
        }
        let ratios: Vec<f64> = (0..n)
            .map(|i| steps.tau() * steps.sigma()[i] * norms[i] * norms[i] / (sampler.prob(i) * GAMMA * GAMMA))
            .collect();
        let imax = (0..n).max_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap();
        worst_ratio = worst_ratio.max(ratios.iter().cloned().fold(0.0, f64::max));
        worst_tight = worst_tight.max((ratios[imax] - 1.0).abs());
    }
    let detail = format!(
        "max ratio {worst_ratio:.15}, |ratio - 1| at argmax block {worst_tight:.1e}, cached vs SVD norm {worst_norm:.1e}"
    );
    if worst_ratio <= 1.0 + 1e-12 && worst_tight <= 1e-12 && worst_norm <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 2-3. descent inequality, Lyapunov bounds, sampler identities

fn small_instances() -> Vec<(ProblemKind, SaddleProblem)> {
    let kinds = [
        ProblemKind::Lasso,
        ProblemKind::Ridge,
        ProblemKind::BasisPursuit,
        ProblemKind::SvmHinge,
    ];
    (0..20u64)
        .map(|s| {
            let kind = kinds[(s % 4) as usize];
            let n = 4 + (s as usize % 5);
            let mut spec = GeneratorSpec::new(kind, n, 6 + (s as usize % 11));
            spec.seed = 500 + s;
            match kind {
                ProblemKind::Lasso => spec.lambda_rel = Some(0.1),
                ProblemKind::Ridge => spec.lambda = 0.5,
                ProblemKind::BasisPursuit => {
                    spec.sparsity = 2;
                    spec.p = spec.p.max(n + 2);
                }
                ProblemKind::SvmHinge => spec.lambda = 0.1,
            }
            // the second half of each kind's instances groups rows in pairs
            if s >= 12 {
                spec.block_size = 2;
            }
            (kind, problems::generate(&spec).unwrap().problem)
        })
        .collect()
}

fn saddle_estimate(problem: &SaddleProblem) -> (Vec<f64>, Vec<f64>) {
    let out = solver::pdhg_run(problem, None, GAMMA, &RunConfig::new(20_000, 20_000)).unwrap();
    (out.state.x, out.state.y)
}

fn random_dual_point(problem: &SaddleProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = gauss_vec(rng, problem.dual_dim());
    problem.f.conj_prox(&v, &vec![1.0; problem.f.len()]).unwrap()
}

fn single_block_vec(dense: &Dense, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = vec![0.0; dense.m];
    let i = rng.gen_range(0..dense.offsets.len() - 1);
    for r in dense.offsets[i]..dense.offsets[i + 1] {
        v[r] = gauss(rng);
    }
    v
}

struct SmallRun {
    descent_checks: usize,
    worst_descent: f64,
    bound_checks: usize,
    worst_bound: f64,
    exact_checks: usize,
    worst_exact: f64,
    mc_checks: usize,
    worst_mc: f64,
}

fn run_small_instances() -> SmallRun {
    let mut out = SmallRun {
        descent_checks: 0,
        worst_descent: f64::INFINITY,
        bound_checks: 0,
        worst_bound: f64::INFINITY,
        exact_checks: 0,
        worst_exact: 0.0,
        mc_checks: 0,
        worst_mc: 0.0,
    };
    for (idx, (_, problem)) in small_instances().into_iter().enumerate() {
        let seed = idx as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(77 + seed);
        let n = problem.n_blocks();
        let sampler = if idx % 5 == 4 {
            SamplerSpec::new(random_probs(&mut rng, n), seed).unwrap()
        } else {
            SamplerSpec::uniform(n, seed)
        };
        let probs = sampler.probs().to_vec();
        let steps = solver::default_step_sizes(&problem.a, GAMMA, &sampler).unwrap();
        let dense = Dense::of(&problem.a);
        let c1 = 1.0 - GAMMA;

        let (xs, ys) = saddle_estimate(&problem);
        let mut points = vec![(xs.clone(), ys.clone())];
        for _ in 0..3 {
            points.push((gauss_vec(&mut rng, problem.primal_dim()), random_dual_point(&problem, &mut rng)));
        }

        let mut state = SolverState::zeros(&problem);
        for _ in 0..200 {
            let probe = solver::spdhg_step_probed(&mut state, &problem, &steps, &sampler).unwrap();
            for (x, y) in &points {
                // D_g(x^k; z) + D_{f*}(ŷ; z)
                let aty: Vec<f64> = (0..dense.p)
                    .map(|j| (0..dense.m).map(|r| dense.a[r * dense.p + j] * y[r]).sum())
                    .collect();
                let ax = dense.apply(x);
                let dg = problem.g.value(&probe.x) - problem.g.value(x) + dot(&aty, &sub(&probe.x, x));
                let df = problem.f.conj_value(&probe.y_hat) - problem.f.conj_value(y) - dot(&ax, &sub(&probe.y_hat, y));
                let lhs = dg + df;
                let vk = dense.vk(&steps, &probs, &sub(&probe.x_prev, x), &sub(&probe.y, y), &sub(&probe.y, &probe.y_prev));
                let mut expected = 0.0;
                for i in 0..n {
                    let mut y1 = probe.y.clone();
                    for r in dense.offsets[i]..dense.offsets[i + 1] {
                        y1[r] = probe.y_hat[r];
                    }
                    expected += probs[i] * dense.vk(&steps, &probs, &sub(&probe.x, x), &sub(&y1, y), &sub(&y1, &probe.y));
                }
                let v = dense.v(&steps, &probs, &sub(&probe.x, &probe.x_prev), &sub(&probe.y, &probe.y_prev));
                let slack = vk - expected - v - lhs;
                out.descent_checks += 1;
                out.worst_descent = out.worst_descent.min(slack);
            }
            let snap = DualUpdateSnapshot {
                offsets: problem.a.block_offsets(),
                probs: &probs,
                sigma: steps.sigma(),
                y_current: &probe.y,
                y_candidate: Some(&probe.y_hat),
            };
            let test_y = &points[1].1;
            let exact = sampling::check_expectation_identities(&snap, test_y, &ys, ExpectationMode::Exact).unwrap();
            for c in &exact.checks {
                out.exact_checks += 1;
                out.worst_exact = out.worst_exact.max(c.error);
            }
            if state.k == 200 {
                let mc = sampling::check_expectation_identities(
                    &snap,
                    test_y,
                    &ys,
                    ExpectationMode::MonteCarlo {
                        draws: 100_000,
                        seed: 9000 + seed,
                    },
                )
                .unwrap();
                for c in &mc.checks {
                    out.mc_checks += 1;
                    out.worst_mc = out.worst_mc.max(c.error);
                }
            }
        }

        for _ in 0..1000 {
            let dx = gauss_vec(&mut rng, dense.p);
            let dy = single_block_vec(&dense, &mut rng);
            let v = dense.v(&steps, &probs, &dx, &dy);
            let lo = c1 * (0.5 * dot(&dx, &dx) / steps.tau() + 0.5 * dense.dual_sq(&steps, &probs, &dy));
            out.bound_checks += 1;
            out.worst_bound = out.worst_bound.min(v - lo);

            let y = gauss_vec(&mut rng, dense.m);
            let ydiff = single_block_vec(&dense, &mut rng);
            let vk = dense.vk(&steps, &probs, &dx, &y, &ydiff);
            let lo = c1 * (0.5 * dot(&dx, &dx) / steps.tau() + 0.5 * dense.dual_sq(&steps, &probs, &ydiff))
                + 0.5 * dense.dual_sq(&steps, &probs, &y);
            out.bound_checks += 1;
            out.worst_bound = out.worst_bound.min(vk - lo);
        }
    }
    out
}

fn criterion_2(run: &SmallRun) -> Outcome {
    let detail = format!(
        "{} one-step checks, worst slack {:+.2e}; {} bound checks, worst slack {:+.2e}",
        run.descent_checks, run.worst_descent, run.bound_checks, run.worst_bound
    );
    if run.worst_descent >= -1e-9 && run.worst_bound >= -1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3(run: &SmallRun) -> Outcome {
    let detail = format!(
        "{} exact checks, worst rel err {:.1e}; {} Monte Carlo checks, worst {:.2} standard errors",
        run.exact_checks, run.worst_exact, run.mc_checks, run.worst_mc
    );
    if run.worst_exact <= sampling::IDENTITY_TOL && run.worst_mc <= 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 4. function calculus

fn catalog(dim: usize, rng: &mut ChaCha8Rng) -> Vec<ProxableFunction> {
    vec![
        ProxableFunction::zero(),
        ProxableFunction::l1(rng.gen_range(0.1..2.0)).unwrap(),
        ProxableFunction::squared_l2(rng.gen_range(0.1..3.0)).unwrap(),
        ProxableFunction::indicator_point(gauss_vec(rng, dim)),
        ProxableFunction::least_squares(gauss_vec(rng, dim)),
        ProxableFunction::hinge(rng.gen_range(0.1..1.0), 1.0).unwrap(),
        ProxableFunction::hinge(rng.gen_range(0.1..1.0), -1.0).unwrap(),
    ]
}

/// `sup_s s·y − h(s)` on a grid, refined around the best grid point.
fn grid_conj(h: &dyn Fn(f64) -> f64, y: f64) -> f64 {
    let (lo, hi, step) = (-50.0, 50.0, 1e-3);
    let n = ((hi - lo) / step) as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=n {
        let s = lo + k as f64 * step;
        let v = s * y - h(s);
        if v > best.0 {
            best = (v, s);
        }
    }
    best.0
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut moreau, mut opt, mut fy, mut grid) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for dim in [1usize, 3] {
        for f in catalog(dim, &mut rng) {
            for _ in 0..100 {
                let v: Vec<f64> = (0..dim).map(|_| 3.0 * gauss(&mut rng)).collect();
                let sigma = 10f64.powf(rng.gen_range(-3.0..3.0));
                let lhs = f.conj_prox(&v, sigma).unwrap();
                let vs: Vec<f64> = v.iter().map(|a| a / sigma).collect();
                let p = f.prox(&vs, 1.0 / sigma).unwrap();
                for j in 0..dim {
                    moreau = moreau.max((lhs[j] - (v[j] - sigma * p[j])).abs());
                }

                let t = 10f64.powf(rng.gen_range(-3.0..3.0));
                let u = f.prox(&v, t).unwrap();
                let w: Vec<f64> = v.iter().zip(&u).map(|(a, b)| (a - b) / t).collect();
                opt = opt.max(f.subdiff_dist(&u, &w).unwrap());
                // the same subgradient through the conjugate prox (exactly inside dom f*)
                let vt: Vec<f64> = v.iter().map(|a| a / t).collect();
                let y = f.conj_prox(&vt, 1.0 / t).unwrap();
                let gap = f.value(&u) + f.conj_value(&y) - dot(&u, &y);
                fy = fy.max(gap.abs());
            }
        }
    }
    // 1-D conjugate closed forms against the grid supremum
    let cases: Vec<(ProxableFunction, Box<dyn Fn(f64) -> f64>, (f64, f64))> = vec![
        (ProxableFunction::l1(1.3).unwrap(), Box::new(|s: f64| 1.3 * s.abs()), (-1.3, 1.3)),
        (ProxableFunction::squared_l2(2.0).unwrap(), Box::new(|s: f64| s * s), (-5.0, 5.0)),
        (ProxableFunction::least_squares(vec![0.7]), Box::new(|s: f64| 0.5 * (s - 0.7).powi(2)), (-5.0, 5.0)),
        (ProxableFunction::hinge(1.0, 1.0).unwrap(), Box::new(|s: f64| (1.0 - s).max(0.0)), (-1.0, 0.0)),
        (ProxableFunction::hinge(0.4, -1.0).unwrap(), Box::new(|s: f64| 0.4 * (1.0 + s).max(0.0)), (0.0, 0.4)),
        (ProxableFunction::zero(), Box::new(|_| 0.0), (0.0, 0.0)),
    ];
    for (f, h, (lo, hi)) in &cases {
        for _ in 0..200 {
            let y = if lo == hi { *lo } else { rng.gen_range(*lo..=*hi) };
            grid = grid.max((grid_conj(h.as_ref(), y) - f.conj_value(&[y])).abs());
        }
    }
    // off-domain queries are +inf for the bounded conjugates
    let off = ProxableFunction::hinge(1.0, 1.0).unwrap().conj_value(&[0.1]).is_infinite()
        && ProxableFunction::l1(1.0).unwrap().conj_value(&[1.5]).is_infinite();
    let detail = format!(
        "moreau {moreau:.1e}, prox optimality {opt:.1e}, fenchel-young {fy:.1e}, grid conjugate {grid:.1e}"
    );
    if moreau <= 1e-10 && opt <= 1e-8 && fy <= 1e-8 && grid <= 1e-3 && off {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 5, 7, 9. desk-scale convergence

fn desk_spec(kind: ProblemKind, seed: u64) -> GeneratorSpec {
    let mut spec = GeneratorSpec::basis_pursuit_desk(seed);
    spec.kind = kind;
    match kind {
        ProblemKind::Lasso => spec.lambda_rel = Some(0.1),
        ProblemKind::Ridge => spec.lambda = 1.0,
        _ => {}
    }
    spec
}

fn certified(spec: &GeneratorSpec, mode: ReferenceMode) -> (harness::Instance, SaddleProblem) {
    let mut cfg = ExperimentConfig::new(ProblemSource::Generated(spec.clone()));
    cfg.metrics = vec![Metric::DistToRef];
    let instance = harness::build_instance(&cfg).unwrap();
    let rc = ReferenceConfig {
        mode,
        ..ReferenceConfig::default()
    };
    let r = harness::certify_reference(&instance, &rc, Path::new(".")).unwrap();
    let problem = instance.problem.clone().with_reference(r).unwrap();
    (instance, problem)
}

struct Trajectory {
    kind: ProblemKind,
    seed: u64,
    fit: Option<diagnostics::RateModel>,
    epochs_to_1e6: Option<f64>,
    min_dist: f64,
    final_dist: f64,
    elapsed: Duration,
}

fn desk_trajectories(kind: ProblemKind) -> Vec<Trajectory> {
    (0..10u64)
        .map(|seed| {
            let t0 = Instant::now();
            let (_, problem) = certified(&desk_spec(kind, seed), ReferenceMode::Planted);
            let n = problem.n_blocks() as u64;
            let sampler = SamplerSpec::uniform(problem.n_blocks(), seed);
            let steps = solver::default_step_sizes(&problem.a, GAMMA, &sampler).unwrap();
            let cfg = RunConfig::new(2000 * n, n).with_metrics(&[Metric::DistToRef]);
            let out = solver::run(&problem, &steps, &sampler, &cfg).unwrap();
            let iters: Vec<f64> = out.log.iter().map(|r| r.iter as f64).collect();
            let vals: Vec<f64> = out.log.iter().map(|r| r.get(Metric::DistToRef).unwrap()).collect();
            Trajectory {
                kind,
                seed,
                fit: diagnostics::rate_fit(&iters, &vals, Some(steps.c1())).ok(),
                epochs_to_1e6: out.log.iter().find(|r| r.get(Metric::DistToRef).unwrap() <= 1e-6).map(|r| r.epoch),
                min_dist: vals.iter().cloned().fold(f64::INFINITY, f64::min),
                final_dist: *vals.last().unwrap(),
                elapsed: t0.elapsed(),
            }
        })
        .collect()
}

fn linear_ok(t: &Trajectory) -> bool {
    t.fit.as_ref().is_some_and(|f| f.slope < 0.0 && f.r_squared >= 0.9) && t.epochs_to_1e6.is_some()
}

fn criterion_5(all: &[Vec<Trajectory>]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for group in all {
        let good = group.iter().filter(|t| linear_ok(t)).count();
        let bad: Vec<String> = group
            .iter()
            .filter(|t| !linear_ok(t))
            .map(|t| match &t.fit {
                Some(f) => format!("seed {} (R2 {:.2})", t.seed, f.r_squared),
                None => format!("seed {} (no fit)", t.seed),
            })
            .collect();
        let secs: f64 = group.iter().map(|t| t.elapsed.as_secs_f64()).sum();
        ok &= good >= 8;
        if group[0].kind == ProblemKind::BasisPursuit {
            ok &= secs < 120.0;
        }
        parts.push(format!(
            "{:?} {good}/10 in {secs:.1}s{}",
            group[0].kind,
            if bad.is_empty() { String::new() } else { format!(" [miss: {}]", bad.join(", ")) }
        ));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7(all: &[Vec<Trajectory>]) -> Outcome {
    let worst_final = all.iter().flatten().map(|t| t.final_dist).fold(0.0, f64::max);
    let worst_min = all.iter().flatten().map(|t| t.min_dist).fold(0.0, f64::max);
    let detail = format!("30 trajectories, worst final distance {worst_final:.1e}, worst best {worst_min:.1e}");
    if worst_final <= 1e-4 && worst_min <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    for seed in 0..10u64 {
        let (_, problem) = certified(&desk_spec(ProblemKind::BasisPursuit, seed), ReferenceMode::Planted);
        let n = problem.n_blocks() as u64;
        let sampler = SamplerSpec::uniform(problem.n_blocks(), seed);
        let cap = 2000 * n;
        let cfg = RunConfig::new(cap, n).with_stop(Metric::DistToRef, 1e-4);
        let steps = solver::default_step_sizes(&problem.a, GAMMA, &sampler).unwrap();
        let sp = solver::run(&problem, &steps, &sampler, &cfg).unwrap();
        let fb = solver::fb_vc_cd_run(&problem, GAMMA, &sampler, &cfg).unwrap();
        let sp_epochs = sp.converged.then(|| sp.state.k / n);
        // FB-VC-CD that never reaches the target needs more than the cap
        let fb_epochs = if fb.converged { fb.state.k / n } else { cap / n + 1 };
        match sp_epochs {
            Some(e) if fb_epochs > e => {}
            _ => ok = false,
        }
        rows.push(format!(
            "{}/{}{}",
            sp_epochs.map_or("-".into(), |e| e.to_string()),
            fb_epochs,
            if fb.converged { "" } else { "+" }
        ));
    }
    let detail = format!("epochs to 1e-4, spdhg/fb_vc_cd per seed: {}", rows.join(" "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 6. ergodic rates

fn ergodic_means(problem: &SaddleProblem, metrics: &[Metric]) -> (Vec<Vec<f64>>, diagnostics::TheoryConstants) {
    let n = problem.n_blocks();
    let ks = [100u64, 1_000, 10_000];
    let mut means = vec![vec![0.0; metrics.len()]; ks.len()];
    let mut constants = None;
    for seed in 0..20u64 {
        let sampler = SamplerSpec::uniform(n, seed);
        let steps = solver::default_step_sizes(&problem.a, GAMMA, &sampler).unwrap();
        if constants.is_none() {
            let x0 = vec![0.0; problem.primal_dim()];
            let y0 = vec![0.0; problem.dual_dim()];
            constants = Some(diagnostics::theory_constants(problem, &steps, sampler.probs(), &x0, &y0).unwrap());
        }
        let out = solver::run(problem, &steps, &sampler, &RunConfig::new(10_000, 100).with_metrics(metrics)).unwrap();
        for (j, k) in ks.iter().enumerate() {
            let rec = out.log.iter().find(|r| r.iter == *k).unwrap();
            for (q, m) in metrics.iter().enumerate() {
                means[j][q] += rec.get(*m).unwrap() / 20.0;
            }
        }
    }
    (means, constants.unwrap())
}

fn criterion_6() -> Outcome {
    let ks = [100.0, 1_000.0, 10_000.0];
    let mut ok = true;
    let mut parts = Vec::new();

    let (_, bp) = certified(&desk_spec(ProblemKind::BasisPursuit, 0), ReferenceMode::Planted);
    let (means, tc) = ergodic_means(&bp, &[Metric::FeasibilityAvgWeighted, Metric::ObjectiveResidualAvg]);
    let (ce2, ce3) = (tc.ce2.unwrap(), tc.ce3.unwrap());
    for (j, k) in ks.iter().enumerate() {
        let feas = k * means[j][0];
        let gres = k * means[j][1];
        ok &= feas <= ce3 && gres <= ce2;
        parts.push(format!("K={k}: K*feas {feas:.3e} <= {ce3:.3e}, K*g-res {gres:.3e} <= {ce2:.3e}"));
    }

    let mut svm = GeneratorSpec::new(ProblemKind::SvmHinge, 100, 50);
    svm.lambda = 0.1;
    svm.seed = 3;
    let (_, sp) = certified(&svm, ReferenceMode::PdhgOracle);
    let (means, tc) = ergodic_means(&sp, &[Metric::ObjectiveResidualAvg]);
    let ce1 = tc.ce1.unwrap();
    for (j, k) in ks.iter().enumerate() {
        let res = k * means[j][0];
        ok &= res <= ce1;
        parts.push(format!("svm K={k}: K*obj {res:.3e} <= {ce1:.3e}"));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 8. oracle equivalences

/// Supremum over a 2-D grid of the smoothed gap objective for a scalar problem,
/// refined once around the best coarse point.
fn grid_smoothed_gap(h: &dyn Fn(f64, f64) -> f64) -> f64 {
    let scan = |cx: f64, cy: f64, half: f64, step: f64| {
        let n = (2.0 * half / step).round() as i64;
        let mut best = (f64::NEG_INFINITY, cx, cy);
        for a in 0..=n {
            let x = cx - half + a as f64 * step;
            for b in 0..=n {
                let y = cy - half + b as f64 * step;
                let v = h(x, y);
                if v > best.0 {
                    best = (v, x, y);
                }
            }
        }
        best
    };
    let coarse = scan(0.0, 0.0, 10.0, 0.01);
    let fine = scan(coarse.1, coarse.2, 0.02, 1e-5);
    coarse.0.max(fine.0)
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();

    // ridge against the dense normal equations (A^T A + λI) x = A^T b
    let spec = desk_spec(ProblemKind::Ridge, 0);
    let (inst, problem) = certified(&spec, ReferenceMode::PdhgOracle);
    let dense = Dense::of(&problem.a);
    let a = DMatrix::from_row_slice(dense.m, dense.p, &dense.a);
    let b = DVector::from_column_slice(&inst.data.targets);
    let lhs = a.transpose() * &a + DMatrix::identity(dense.p, dense.p) * spec.lambda;
    let x_ne = lhs.cholesky().unwrap().solve(&(a.transpose() * b));
    let x_star = &problem.reference.as_ref().unwrap().x_star;
    let err = x_star.iter().zip(x_ne.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    ok &= err <= 1e-8;
    parts.push(format!("ridge vs normal equations {err:.1e}"));

    // PDHG is SPDHG on the single-block operator
    let mut lasso = GeneratorSpec::new(ProblemKind::Lasso, 30, 20);
    lasso.lambda_rel = Some(0.1);
    lasso.seed = 8;
    let problem = problems::generate(&lasso).unwrap().problem;
    let cfg = RunConfig::new(3000, 100).with_metrics(&[Metric::KktResidual]);
    let pd = solver::pdhg_run(&problem, None, GAMMA, &cfg).unwrap();
    let single = problem.single_block();
    let sampler = SamplerSpec::uniform(1, 12345);
    let steps = solver::default_step_sizes(&single.a, GAMMA, &sampler).unwrap();
    let sp = solver::run(&single, &steps, &sampler, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|a| a.to_bits()).collect::<Vec<_>>();
    let identical = bits(&pd.state.x) == bits(&sp.state.x)
        && bits(&pd.state.y) == bits(&sp.state.y)
        && pd.log.len() == sp.log.len()
        && pd
            .log
            .iter()
            .zip(&sp.log)
            .all(|(a, b)| a.values[0].1.to_bits() == b.values[0].1.to_bits());
    ok &= identical;
    parts.push(format!("pdhg == spdhg(n=1) bitwise: {identical}"));

    // smoothed gap on scalar problems against a 2-D grid
    let scalar = |g: ProxableFunction, f: ProxableFunction, a: f64| {
        let op = BlockLinearOperator::from_dense(1, 1, &[a]).unwrap();
        SaddleProblem::new(g, SeparableSum::new(vec![f], &[1]).unwrap(), op).unwrap()
    };
    let cases = [
        (scalar(ProxableFunction::l1(1.0).unwrap(), ProxableFunction::least_squares(vec![0.5]), 1.5), 0.3, -0.2, 0.7, 0.5),
        (scalar(ProxableFunction::squared_l2(0.5).unwrap(), ProxableFunction::hinge(1.0, 1.0).unwrap(), -0.8), -1.0, -0.4, 0.4, 1.0),
        (scalar(ProxableFunction::l1(0.6).unwrap(), ProxableFunction::squared_l2(2.0).unwrap(), 0.9), 2.0, 1.0, 0.5, 0.25),
        (scalar(ProxableFunction::zero(), ProxableFunction::hinge(0.5, -1.0).unwrap(), 1.2), 0.5, 0.2, 1.0, 2.0),
    ];
    let mut worst: f64 = 0.0;
    for (problem, xbar, ybar, alpha, beta) in &cases {
        let (xhat, yhat) = (0.25, -0.1);
        let a = problem.a.to_dense()[0];
        let g = |x: f64| problem.g.value(&[x]);
        let fs = |y: f64| problem.f.conj_value(&[y]);
        let h = |x: f64, y: f64| {
            g(*xbar) + a * xbar * y - fs(y) - g(x) - a * x * ybar + fs(*ybar)
                - 0.5 * alpha * (x - xhat).powi(2)
                - 0.5 * beta * (y - yhat).powi(2)
        };
        let oracle = grid_smoothed_gap(&h);
        let got = diagnostics::smoothed_gap(problem, &[*xbar], &[*ybar], &[xhat], &[yhat], *alpha, *beta).unwrap();
        worst = worst.max((oracle - got).abs());
    }
    ok &= worst <= 1e-3;
    parts.push(format!("smoothed gap vs grid {worst:.1e}"));

    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 10. reproducibility

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // ridge, so that every method (SDCA and SPDHG-mu included) applies
    let mut spec = GeneratorSpec::new(ProblemKind::Ridge, 40, 60);
    spec.lambda = 0.5;
    spec.seed = 21;
    let mut cfg = ExperimentConfig::new(ProblemSource::Generated(spec));
    cfg.solvers = [
        harness::Method::Spdhg,
        harness::Method::SpdhgMu,
        harness::Method::Pdhg,
        harness::Method::FbVcCd,
        harness::Method::Svrg,
        harness::Method::Sdca,
    ]
    .into_iter()
    .map(SolverConfig::new)
    .collect();
    cfg.seeds = vec![0, 1, 2];
    cfg.max_epochs = 20.0;
    cfg.metrics = vec![Metric::ObjectiveResidual, Metric::DistToRef, Metric::KktResidual];
    cfg.output_dir = dir.path().join("run");
    let res = harness::run_experiment(&cfg).map_err(|e| e.to_string())?;
    let run_json = res.dir.join("run.json");
    let mut compared = 0;
    for t in &res.trajectories {
        let replayed = harness::replay(&run_json, &t.label, t.seed).map_err(|e| e.to_string())?;
        let rows = harness::read_trajectory_csv(&res.dir.join(harness::trajectory_file(&t.label, t.seed)))
            .map_err(|e| e.to_string())?;
        if replayed.len() != rows.len() || replayed.len() != t.log.len() {
            return Err(format!("{} seed {}: {} replayed vs {} logged", t.label, t.seed, replayed.len(), rows.len()));
        }
        for (rec, row) in replayed.iter().zip(&rows) {
            if rec.iter != row.iter {
                return Err(format!("{} seed {}: iteration mismatch", t.label, t.seed));
            }
            for (m, v) in &rec.values {
                if row.get(m.name()).map(f64::to_bits) != Some(v.to_bits()) {
                    return Err(format!("{} seed {} iter {}: {m} differs", t.label, t.seed, rec.iter));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("{} trajectories, {compared} logged values replayed bit-identically", res.trajectories.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed();
        let over = limit.is_some_and(|l| dt > l);
        let (status, detail) = match (&out, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; took {dt:.1?}, limit {:?}", limit.unwrap())),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("criterion {id:>2} {status} {name} ({dt:.1?}): {detail}");
    };

    report(1, "step-size contract", Some(Duration::from_secs(1)), &mut criterion_1);
    let t0 = Instant::now();
    let small = run_small_instances();
    let small_time = t0.elapsed();
    report(2, "descent inequality", Some(Duration::from_secs(30)), &mut || {
        if small_time > Duration::from_secs(30) {
            return Err(format!("instance suite took {small_time:.1?}"));
        }
        criterion_2(&small).map(|d| format!("{d}; suite {small_time:.1?}"))
    });
    report(3, "sampler identities", None, &mut || criterion_3(&small));
    report(4, "function calculus", Some(Duration::from_secs(10)), &mut criterion_4);
    let mut desk = Vec::new();
    report(5, "linear convergence", None, &mut || {
        desk = [ProblemKind::BasisPursuit, ProblemKind::Lasso, ProblemKind::Ridge]
            .into_iter()
            .map(desk_trajectories)
            .collect();
        criterion_5(&desk)
    });
    report(6, "ergodic rates", Some(Duration::from_secs(300)), &mut criterion_6);
    report(7, "almost-sure proxy", None, &mut || criterion_7(&desk));
    report(8, "oracle equivalences", None, &mut criterion_8);
    report(9, "baseline ordering", None, &mut criterion_9);
    report(10, "reproducibility", None, &mut criterion_10);

    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
