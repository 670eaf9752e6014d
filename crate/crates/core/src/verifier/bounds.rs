use serde::{Deserialize, Serialize};

use super::exact::{evaluate, expected_advantage, JointPolicy};
use crate::env::TabularDecPomdp;
use crate::error::{contract, Result};
use crate::policy::divergence::tv_divergence;

/// `4 eps [(1 - gamma prod_i (1 - alpha_i)) / (1 - gamma) - 1]`.
pub fn improvement_bound(eps: f64, alphas: &[f64], gamma: f64) -> f64 {
    let keep: f64 = alphas.iter().map(|a| 1.0 - a).product();
    4.0 * eps * ((1.0 - gamma * keep) / (1.0 - gamma) - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `max_{s,a} |A^pi(s, a)|`.
    pub epsilon: f64,
    /// `sqrt(max_o TV(pi^i(.|o), pi~^i(.|o)) / 2)` per agent.
    pub alphas: Vec<f64>,
    pub bound: f64,
    /// `|J(pi~) - J~_pi(pi~)|`.
    pub gap: f64,
    pub slack: f64,
}

impl BoundReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.slack >= -tol
    }
}

pub fn bound_check(mdp: &TabularDecPomdp, pi: &JointPolicy, pi_new: &JointPolicy) -> Result<BoundReport> {
    let old = evaluate(mdp, pi)?;
    let new = evaluate(mdp, pi_new)?;
    let surrogate = old.j + expected_advantage(mdp, pi_new, &old.rho, &old.advantage);
    let epsilon = old.advantage.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let alphas = (0..mdp.n_agents())
        .map(|i| {
            let mut worst = 0.0f64;
            for o in 0..mdp.n_observations() {
                worst = worst.max(tv_divergence(&pi.probs[i][o], &pi_new.probs[i][o])?);
            }
            Ok((0.5 * worst).sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    let bound = improvement_bound(epsilon, &alphas, mdp.gamma());
    let gap = (new.j - surrogate).abs();
    Ok(BoundReport {
        epsilon,
        alphas,
        bound,
        gap,
        slack: bound - gap,
    })
}

/// Both sides of `Var[prod_j r^j] >= prod_j Var[r^j]` under the old policies,
/// by enumeration over the joint actions of the given agents.
///
/// `old[j]` and `new[j]` are agent `j`'s action distributions at a fixed observation.
pub fn variance_inequality_check(old: &[Vec<f64>], new: &[Vec<f64>]) -> Result<(f64, f64)> {
    if old.len() != new.len() || old.iter().zip(new).any(|(a, b)| a.len() != b.len()) {
        return Err(contract("old and new distributions disagree in shape"));
    }
    if old.iter().flatten().any(|&p| !(p > 0.0)) {
        return Err(contract("old distributions need full support for ratios to exist"));
    }
    let ratios: Vec<Vec<f64>> = old
        .iter()
        .zip(new)
        .map(|(o, n)| o.iter().zip(n).map(|(p, q)| q / p).collect())
        .collect();
    let variance = |probs: &[f64], xs: &[f64]| {
        let m: f64 = probs.iter().zip(xs).map(|(p, x)| p * x).sum();
        probs.iter().zip(xs).map(|(p, x)| p * (x - m) * (x - m)).sum::<f64>()
    };
    // Joint distribution and product ratio over every action combination.
    let mut joint_p = vec![1.0];
    let mut joint_r = vec![1.0];
    for (o, r) in old.iter().zip(&ratios) {
        let mut p2 = Vec::with_capacity(joint_p.len() * o.len());
        let mut r2 = Vec::with_capacity(joint_p.len() * o.len());
        for (p, x) in joint_p.iter().zip(&joint_r) {
            for (q, y) in o.iter().zip(r) {
                p2.push(p * q);
                r2.push(x * y);
            }
        }
        joint_p = p2;
        joint_r = r2;
    }
    let lhs = variance(&joint_p, &joint_r);
    let rhs = old.iter().zip(&ratios).map(|(o, r)| variance(o, r)).product();
    Ok((lhs, rhs))
}

/// `max_b |P_b sum_i c_i A_i - sum_i c_i P_b A_i|` over a batch, in the
/// unclipped regime where every product lies strictly inside `(1 - eps1, 1 + eps1)`.
pub fn decomposition_identity_check(
    products: &[f64],
    advantages: &[Vec<f64>],
    weights: &[Vec<f64>],
    eps1: f64,
) -> Result<f64> {
    if products.len() != advantages.len() || products.len() != weights.len() {
        return Err(contract("batch inputs have different lengths"));
    }
    if let Some(p) = products.iter().find(|&&p| !(p > 1.0 - eps1 && p < 1.0 + eps1)) {
        return Err(contract(format!("ratio product {p} is outside the unclipped band")));
    }
    if weights.iter().flatten().any(|&c| c < 0.0) {
        return Err(contract("mixing weights must be non-negative"));
    }
    Ok(products
        .iter()
        .zip(advantages)
        .zip(weights)
        .map(|((&p, a), c)| {
            let joint: f64 = c.iter().zip(a).map(|(c, a)| c * a).sum();
            let split: f64 = c.iter().zip(a).map(|(c, a)| c * (p * a)).sum();
            (p * joint - split).abs()
        })
        .fold(0.0, f64::max))
}
