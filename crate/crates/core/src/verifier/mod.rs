//! Exact evaluation of joint policies on enumerable models and numerical checks
//! of the trust-region theory behind the clipped objectives.

mod bounds;
mod exact;

pub use bounds::{bound_check, decomposition_identity_check, improvement_bound, variance_inequality_check, BoundReport};
pub use exact::{
    bellman_residual, evaluate, evaluate_truncated, expected_advantage, exact_performance, first_order_check,
    perf_difference_check, performance_gradient_fd, surrogate, surrogate_gradient, ExactEval, JointPolicy,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{fixture, TabularDecPomdp, FIXTURE_IDS};
use crate::error::{config, Result};
use crate::policy::{divergence, softmax, AgentPolicy, Architecture};

/// Names accepted by [`run_check`].
pub const CHECK_IDS: [&str; 7] = [
    "bellman",
    "perf-difference",
    "improvement-bound",
    "first-order",
    "variance-inequality",
    "decomposition",
    "pinsker",
];

/// Checks that run on the tabular fixtures; the rest use synthetic inputs.
const FIXTURE_CHECKS: [&str; 4] = ["bellman", "perf-difference", "improvement-bound", "first-order"];

/// Tolerances each check's residuals must stay under.
pub const BELLMAN_TOL: f64 = 1e-10;
pub const PERF_DIFFERENCE_TOL: f64 = 1e-9;
pub const BOUND_SLACK_TOL: f64 = 1e-9;
pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
pub const VARIANCE_TOL: f64 = 1e-12;
pub const DECOMPOSITION_TOL: f64 = 1e-12;

/// Outcome of one check on one fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub fixture: String,
    pub trials: usize,
    pub max_residual: f64,
    pub violations: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Default trial counts per check.
pub fn default_trials(check: &str) -> usize {
    match check {
        "bellman" | "perf-difference" => 100,
        "first-order" => 20,
        "pinsker" => 10_000,
        _ => 1000,
    }
}

/// Random policy pair: an arbitrary old policy and a new one that is either
/// unrelated or a perturbation of it, so both small and large policy changes occur.
fn random_pair(mdp: &TabularDecPomdp, rng: &mut ChaCha8Rng) -> (JointPolicy, JointPolicy) {
    let scale = rng.random_range(0.1..4.0);
    let old = JointPolicy::random(mdp, scale, rng);
    let new = if rng.random_bool(0.5) {
        JointPolicy::random(mdp, rng.random_range(0.1..8.0), rng)
    } else {
        let step = 10f64.powf(rng.random_range(-3.0..0.0));
        let probs = old
            .probs
            .iter()
            .map(|agent| {
                agent
                    .iter()
                    .map(|dist| {
                        let logits: Vec<f64> = dist.iter().map(|p| p.ln() + rng.random_range(-step..step)).collect();
                        softmax(&logits)
                    })
                    .collect()
            })
            .collect();
        JointPolicy { probs }
    };
    (old, new)
}

fn random_tabular_policies(mdp: &TabularDecPomdp, rng: &mut ChaCha8Rng) -> Vec<AgentPolicy> {
    let scale = rng.random_range(0.1..2.0);
    (0..mdp.n_agents())
        .map(|_| AgentPolicy::random(Architecture::TabularSoftmax, mdp.n_observations(), mdp.n_actions(), scale, rng))
        .collect()
}

fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = rng.random_range(0.1..3.0);
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    softmax(&logits)
}

/// Runs `check` for `trials` random draws on `fixture_id` (ignored by the
/// fixture-free checks). Seeds are fixed, so reports are reproducible.
pub fn run_check(check: &str, fixture_id: &str, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual = 0.0f64;
    let mut violations = 0usize;
    let mut record = |residual: f64, ok: bool| {
        max_residual = max_residual.max(residual);
        if !ok {
            violations += 1;
        }
    };
    let uses_fixture = FIXTURE_CHECKS.contains(&check);
    let mdp = if uses_fixture { Some(fixture(fixture_id, seed)?) } else { None };
    match check {
        "bellman" => {
            let mdp = mdp.unwrap();
            for _ in 0..trials {
                let pi = JointPolicy::random(&mdp, rng.random_range(0.1..4.0), &mut rng);
                let e = evaluate(&mdp, &pi)?;
                let r = bellman_residual(&mdp, &pi, &e.v);
                record(r, r < BELLMAN_TOL);
            }
        }
        "perf-difference" => {
            let mdp = mdp.unwrap();
            for _ in 0..trials {
                let (a, b) = random_pair(&mdp, &mut rng);
                let r = perf_difference_check(&mdp, &a, &b)?;
                record(r, r < PERF_DIFFERENCE_TOL);
            }
        }
        "improvement-bound" => {
            let mdp = mdp.unwrap();
            for _ in 0..trials {
                let (a, b) = random_pair(&mdp, &mut rng);
                let rep = bound_check(&mdp, &a, &b)?;
                record((-rep.slack).max(0.0), rep.holds(BOUND_SLACK_TOL));
            }
        }
        "first-order" => {
            let mdp = mdp.unwrap();
            for _ in 0..trials {
                let policies = random_tabular_policies(&mdp, &mut rng);
                let gap = first_order_check(&mdp, &policies, FD_STEP)?;
                record(gap, gap < FIRST_ORDER_TOL);
            }
        }
        "variance-inequality" => {
            for t in 0..trials {
                let others = 1 + t % 3;
                let n_actions = rng.random_range(2..=4);
                let old: Vec<Vec<f64>> = (0..others).map(|_| random_simplex(n_actions, &mut rng)).collect();
                let new: Vec<Vec<f64>> = (0..others).map(|_| random_simplex(n_actions, &mut rng)).collect();
                let (lhs, rhs) = variance_inequality_check(&old, &new)?;
                let shortfall = (rhs - lhs).max(0.0);
                record(shortfall, shortfall <= VARIANCE_TOL * lhs.max(1.0));
            }
        }
        "decomposition" => {
            for _ in 0..trials {
                let batch = rng.random_range(1..64);
                let n = rng.random_range(1..=4);
                let eps1 = 0.2;
                let products: Vec<f64> = (0..batch).map(|_| rng.random_range(1.0 - eps1 + 1e-9..1.0 + eps1)).collect();
                let adv: Vec<Vec<f64>> = (0..batch).map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
                let w: Vec<Vec<f64>> = (0..batch).map(|_| (0..n).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
                let r = decomposition_identity_check(&products, &adv, &w, eps1)?;
                record(r, r < DECOMPOSITION_TOL);
            }
        }
        "pinsker" => {
            for _ in 0..trials {
                let n = rng.random_range(2..=6);
                let p = random_simplex(n, &mut rng);
                let q = random_simplex(n, &mut rng);
                let tv = divergence::tv_divergence(&p, &q)?;
                let kl = divergence::kl_divergence(&p, &q)?;
                let excess = (tv * tv - 0.5 * kl).max(0.0);
                record(excess, excess <= 1e-15);
            }
        }
        other => {
            return Err(config(format!(
                "unknown check '{other}' (known: {})",
                CHECK_IDS.join(", ")
            )))
        }
    }
    Ok(CheckReport {
        check: check.to_string(),
        fixture: if uses_fixture { fixture_id.to_string() } else { "synthetic".to_string() },
        trials,
        max_residual,
        violations,
    })
}

/// Every check on every fixture (or only `fixture_id`), with per-check default
/// trial counts unless `trials` overrides them.
pub fn run_all(fixture_id: Option<&str>, trials: Option<usize>, seed: u64) -> Result<Vec<CheckReport>> {
    let fixtures: Vec<&str> = match fixture_id {
        Some(id) => {
            fixture(id, seed)?;
            vec![id]
        }
        None => FIXTURE_IDS.to_vec(),
    };
    let mut out = Vec::new();
    for check in CHECK_IDS {
        let n = trials.unwrap_or_else(|| default_trials(check));
        if FIXTURE_CHECKS.contains(&check) {
            for f in &fixtures {
                out.push(run_check(check, f, n, seed)?);
            }
        } else {
            out.push(run_check(check, "", n, seed)?);
        }
    }
    Ok(out)
}
