//! Block index sampling.
//!
//! Draws are a pure function of `(seed, counter)`: the counter selects a
//! ChaCha stream, so any iteration of any trajectory can be replayed without
//! regenerating its prefix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    seed: u64,
    min_prob: f64,
}

impl SamplerSpec {
    /// `p_i = 1/n`.
    pub fn uniform(n: usize, seed: u64) -> Self {
        Self::new(vec![1.0 / n as f64; n], seed).expect("uniform probabilities are valid")
    }

    pub fn new(probs: Vec<f64>, seed: u64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("sampler needs at least one block".into()));
        }
        if probs.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument("block probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "block probabilities sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        let min_prob = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            probs,
            cdf,
            seed,
            min_prob,
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// `p̲ = min_i p_i`.
    pub fn min_prob(&self) -> f64 {
        self.min_prob
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.n() as f64;
        self.probs.iter().all(|p| (p - u).abs() <= 1e-15)
    }

    /// Uniform variate in `[0, 1)` for the given counter.
    pub fn uniform_at(&self, counter: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(counter);
        rng.gen::<f64>()
    }

    /// Block index for the given counter, by inverse CDF.
    pub fn draw(&self, counter: u64) -> usize {
        if self.probs.len() == 1 {
            return 0;
        }
        let u = self.uniform_at(counter);
        self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1)
    }
}

/// Inputs for the conditional-expectation identities of one dual update.
///
/// All dual vectors are full length; block `i` occupies
/// `offsets[i]..offsets[i + 1]` and uses step `sigma[i]`.
#[derive(Debug, Clone, Copy)]
pub struct DualUpdateSnapshot<'a> {
    pub offsets: &'a [usize],
    pub probs: &'a [f64],
    pub sigma: &'a [f64],
    /// `y^k`
    pub y_current: &'a [f64],
    /// Full-dimensional candidate `ŷ^{k+1}` (every block updated).
    pub y_candidate: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMode {
    /// Enumerate all `n` outcomes with weights `p_i`.
    Exact,
    /// Average `draws` sampled outcomes; accept within three standard errors.
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// Relative error (exact mode) or deviation in standard errors (Monte Carlo).
    pub error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct IdentityReport {
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Relative tolerance of the exact-enumeration identities.
pub const IDENTITY_TOL: f64 = 1e-10;

struct Weighted<'a> {
    offsets: &'a [usize],
    sigma: &'a [f64],
}

impl Weighted<'_> {
    /// `‖a − b‖²` with per-block weight `w(i) / σ_i`.
    fn sq(&self, a: &[f64], b: &[f64], w: impl Fn(usize) -> f64) -> f64 {
        (0..self.sigma.len())
            .map(|i| {
                let r = self.offsets[i]..self.offsets[i + 1];
                let d: f64 = a[r.clone()]
                    .iter()
                    .zip(&b[r])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                d * w(i) / self.sigma[i]
            })
            .sum()
    }
}

/// Checks `E_k[y^{k+1}] = Pŷ + (I − P)y^k` and its consequences
/// (the `ŷ` representation, the weighted second moments around a test point
/// `test_y`, around a reference `ref_y`, and around `y^k`).
pub fn check_expectation_identities(
    snap: &DualUpdateSnapshot<'_>,
    test_y: &[f64],
    ref_y: &[f64],
    mode: ExpectationMode,
) -> Result<IdentityReport> {
    let y_hat = snap
        .y_candidate
        .ok_or_else(|| Error::InvalidArgument("full-dimensional dual candidate is missing".into()))?;
    let n = snap.probs.len();
    let m = *snap.offsets.last().unwrap();
    for (what, v) in [("y^k", snap.y_current), ("candidate", y_hat), ("test point", test_y), ("reference", ref_y)] {
        if v.len() != m {
            return Err(Error::dim(what, m, v.len()));
        }
    }
    if snap.sigma.len() != n || snap.offsets.len() != n + 1 {
        return Err(Error::dim("blocks", n, snap.sigma.len()));
    }
    let yk = snap.y_current;
    let p = snap.probs;
    let wn = Weighted {
        offsets: snap.offsets,
        sigma: snap.sigma,
    };

    // y^{k+1} when block i is drawn
    let outcome = |i: usize| -> Vec<f64> {
        let mut y = yk.to_vec();
        let r = snap.offsets[i]..snap.offsets[i + 1];
        y[r.clone()].copy_from_slice(&y_hat[r]);
        y
    };

    // Deterministic right-hand sides.
    let mut mean_rhs = vec![0.0; m];
    for i in 0..n {
        for r in snap.offsets[i]..snap.offsets[i + 1] {
            mean_rhs[r] = p[i] * y_hat[r] + (1.0 - p[i]) * yk[r];
        }
    }
    let moment_test_rhs = wn.sq(y_hat, test_y, |i| p[i]) + wn.sq(yk, test_y, |i| 1.0 - p[i]);
    let cand_ref = wn.sq(y_hat, ref_y, |_| 1.0);
    let prior_ref = wn.sq(yk, ref_y, |i| 1.0 / p[i] - 1.0);
    let cand_step = wn.sq(y_hat, yk, |_| 1.0);

    // Samples of the random quantities: y^{k+1} projected on a direction,
    // and the three weighted squared distances.
    let direction: Vec<f64> = (0..m).map(|r| ((r as f64 + 1.0) * 0.7548776662).sin()).collect();
    let sample = |y1: &[f64]| -> [f64; 4] {
        [
            linalg::dot(&direction, y1),
            wn.sq(y1, test_y, |_| 1.0),
            wn.sq(y1, ref_y, |i| 1.0 / p[i]),
            wn.sq(y1, yk, |i| 1.0 / p[i]),
        ]
    };

    let mut report = IdentityReport::default();
    match mode {
        ExpectationMode::Exact => {
            let mut mean = vec![0.0; m];
            let mut moments = [0.0; 4];
            for i in 0..n {
                let y1 = outcome(i);
                linalg::axpy(p[i], &y1, &mut mean);
                let s = sample(&y1);
                for (acc, v) in moments.iter_mut().zip(s) {
                    *acc += p[i] * v;
                }
            }
            let scale_m = linalg::norm(&mean).max(linalg::norm(&mean_rhs));
            let err_m = linalg::dist(&mean, &mean_rhs);
            report.push_exact("mean", linalg::norm(&mean), linalg::norm(&mean_rhs), err_m, scale_m);

            // ŷ = P⁻¹E[y^{k+1}] − (P⁻¹ − I)y^k
            let mut recon = vec![0.0; m];
            let mut scale_r: f64 = 0.0;
            for i in 0..n {
                for r in snap.offsets[i]..snap.offsets[i + 1] {
                    recon[r] = mean[r] / p[i] - (1.0 / p[i] - 1.0) * yk[r];
                    scale_r = scale_r.max((mean[r] / p[i]).abs()).max(((1.0 / p[i] - 1.0) * yk[r]).abs());
                }
            }
            let err_r = linalg::dist(&recon, y_hat);
            report.push_exact("candidate_representation", linalg::norm(&recon), linalg::norm(y_hat), err_r, scale_r.max(linalg::norm(y_hat)));

            report.push_exact(
                "second_moment_test_point",
                moments[1],
                moment_test_rhs,
                (moments[1] - moment_test_rhs).abs(),
                moments[1].abs().max(moment_test_rhs.abs()),
            );
            let rhs_ref = moments[2] - prior_ref;
            report.push_exact(
                "second_moment_reference",
                cand_ref,
                rhs_ref,
                (cand_ref - rhs_ref).abs(),
                cand_ref.abs().max(moments[2].abs()).max(prior_ref.abs()),
            );
            report.push_exact(
                "second_moment_step",
                cand_step,
                moments[3],
                (cand_step - moments[3]).abs(),
                cand_step.abs().max(moments[3].abs()),
            );
        }
        ExpectationMode::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(Error::InvalidArgument("Monte Carlo needs at least two draws".into()));
            }
            let sampler = SamplerSpec::new(p.to_vec(), seed)?;
            // The outcomes only depend on the drawn block, so count draws per block.
            let per_block: Vec<[f64; 4]> = (0..n).map(|i| sample(&outcome(i))).collect();
            let mut counts = vec![0u64; n];
            for c in 0..draws as u64 {
                counts[sampler.draw(c)] += 1;
            }
            let nd = draws as f64;
            let targets = [
                linalg::dot(&direction, &mean_rhs),
                moment_test_rhs,
                cand_ref + prior_ref,
                cand_step,
            ];
            let names = [
                "mean",
                "second_moment_test_point",
                "second_moment_reference",
                "second_moment_step",
            ];
            for q in 0..4 {
                let mean = (0..n).map(|i| counts[i] as f64 * per_block[i][q]).sum::<f64>() / nd;
                let var = (0..n)
                    .map(|i| counts[i] as f64 * (per_block[i][q] - mean).powi(2))
                    .sum::<f64>()
                    / (nd - 1.0);
                let se = (var / nd).sqrt();
                let dev = (mean - targets[q]).abs();
                let slack = IDENTITY_TOL * (1.0 + targets[q].abs());
                let z = if dev <= slack { 0.0 } else if se > 0.0 { dev / se } else { f64::INFINITY };
                report.checks.push(IdentityCheck {
                    name: names[q],
                    lhs: mean,
                    rhs: targets[q],
                    error: z,
                    passed: dev <= 3.0 * se + slack,
                });
            }
        }
    }
    Ok(report)
}

impl IdentityReport {
    fn push_exact(&mut self, name: &'static str, lhs: f64, rhs: f64, abs_err: f64, scale: f64) {
        let rel = if scale > 0.0 { abs_err / scale } else { abs_err };
        self.checks.push(IdentityCheck {
            name,
            lhs,
            rhs,
            error: rel,
            passed: rel <= IDENTITY_TOL,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_block_always_zero() {
        let s = SamplerSpec::uniform(1, 42);
        assert!((0..100).all(|c| s.draw(c) == 0));
    }

    #[test]
    fn uniform_frequencies() {
        let s = SamplerSpec::uniform(4, 9);
        let mut counts = [0usize; 4];
        for c in 0..100_000 {
            counts[s.draw(c)] += 1;
        }
        for k in counts {
            let f = k as f64 / 1e5;
            assert!((f - 0.25).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn nonuniform_frequencies_and_determinism() {
        let s = SamplerSpec::new(vec![0.9, 0.1], 2024).unwrap();
        let first: Vec<usize> = (0..5).map(|c| s.draw(c)).collect();
        let again: Vec<usize> = (0..5).map(|c| s.draw(c)).collect();
        assert_eq!(first, again);
        let ones = (0..100_000).filter(|&c| s.draw(c) == 1).count() as f64 / 1e5;
        // binomial standard deviation ~ 9.5e-4
        assert!((ones - 0.1).abs() < 3.0 * 9.5e-4);
        // counter addressing is order independent
        assert_eq!(s.draw(3), s.with_seed(2024).draw(3));
    }

    #[test]
    fn rejects_invalid_probabilities() {
        assert!(SamplerSpec::new(vec![0.5, 0.6], 0).is_err());
        assert!(SamplerSpec::new(vec![1.0, 0.0], 0).is_err());
        assert!(SamplerSpec::new(vec![], 0).is_err());
        let s = SamplerSpec::new(vec![0.2, 0.3, 0.5], 0).unwrap();
        assert_eq!(s.min_prob(), 0.2);
        assert!(!s.is_uniform());
    }

    fn random_vec(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        (0..m).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn identities_exact_n3() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let offsets = [0, 1, 3, 4];
        let probs = [1.0 / 3.0; 3];
        let sigma = [0.4, 1.3, 0.05];
        let yk = random_vec(&mut rng, 4);
        let yh = random_vec(&mut rng, 4);
        let t = random_vec(&mut rng, 4);
        let r = random_vec(&mut rng, 4);
        let snap = DualUpdateSnapshot {
            offsets: &offsets,
            probs: &probs,
            sigma: &sigma,
            y_current: &yk,
            y_candidate: Some(&yh),
        };
        let rep = check_expectation_identities(&snap, &t, &r, ExpectationMode::Exact).unwrap();
        assert!(rep.passed(), "{:?}", rep.first_failure());
        assert_eq!(rep.checks.len(), 5);

        let mc = check_expectation_identities(
            &snap,
            &t,
            &r,
            ExpectationMode::MonteCarlo { draws: 100_000, seed: 1 },
        )
        .unwrap();
        assert!(mc.passed(), "{:?}", mc.first_failure());
    }

    #[test]
    fn identities_single_block_and_zero_step() {
        let offsets = [0, 2];
        let probs = [1.0];
        let sigma = [0.7];
        let yk = [1.0, -2.0];
        let yh = [0.5, 0.25];
        let snap = DualUpdateSnapshot {
            offsets: &offsets,
            probs: &probs,
            sigma: &sigma,
            y_current: &yk,
            y_candidate: Some(&yh),
        };
        let rep = check_expectation_identities(&snap, &yk, &yh, ExpectationMode::Exact).unwrap();
        assert!(rep.passed());
        // with P = I the mean of y^{k+1} is ŷ itself
        assert_eq!(rep.checks[0].lhs, crate::linalg::norm(&yh));

        let still = DualUpdateSnapshot {
            y_candidate: Some(&yk),
            ..snap
        };
        let rep = check_expectation_identities(&still, &yh, &yh, ExpectationMode::Exact).unwrap();
        let step = rep.checks.iter().find(|c| c.name == "second_moment_step").unwrap();
        assert_eq!((step.lhs, step.rhs), (0.0, 0.0));
        assert!(rep.passed());
    }

    #[test]
    fn missing_candidate_is_an_error() {
        let snap = DualUpdateSnapshot {
            offsets: &[0, 1],
            probs: &[1.0],
            sigma: &[1.0],
            y_current: &[0.0],
            y_candidate: None,
        };
        assert!(check_expectation_identities(&snap, &[0.0], &[0.0], ExpectationMode::Exact).is_err());
    }
}
