use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::TabularDecPomdp;
use crate::error::{contract, Error, Result};
use crate::policy::{softmax, AgentPolicy, Architecture};

/// Per-agent action distributions `probs[i][o][a]` indexed by observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl JointPolicy {
    pub fn new(probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        for (i, agent) in probs.iter().enumerate() {
            for (o, dist) in agent.iter().enumerate() {
                let total: f64 = dist.iter().sum();
                if dist.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(contract(format!("agent {i}, observation {o}: not a distribution")));
                }
            }
        }
        Ok(Self { probs })
    }

    pub fn from_policies(policies: &[AgentPolicy]) -> Result<Self> {
        let probs = policies
            .iter()
            .map(|p| (0..p.n_observations()).map(|o| p.action_probs(o)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { probs })
    }

    /// Softmax policies with logits uniform in `(-scale, scale)`.
    pub fn random(mdp: &TabularDecPomdp, scale: f64, rng: &mut dyn RngCore) -> Self {
        let probs = (0..mdp.n_agents())
            .map(|_| {
                (0..mdp.n_observations())
                    .map(|_| {
                        let logits: Vec<f64> = (0..mdp.n_actions()).map(|_| rng.random_range(-scale..scale)).collect();
                        softmax(&logits)
                    })
                    .collect()
            })
            .collect();
        Self { probs }
    }

    pub fn n_agents(&self) -> usize {
        self.probs.len()
    }

    pub fn agent(&self, i: usize) -> &[Vec<f64>] {
        &self.probs[i]
    }

    /// `pi(a | s)` of joint action `joint_index` in state `s`.
    pub fn joint_prob(&self, mdp: &TabularDecPomdp, state: usize, joint_index: usize) -> f64 {
        let joint = mdp.joint_space().decode(joint_index);
        joint
            .iter()
            .enumerate()
            .map(|(i, &a)| self.probs[i][mdp.observation(state, i)][a])
            .product()
    }

    fn check(&self, mdp: &TabularDecPomdp) -> Result<()> {
        if self.probs.len() != mdp.n_agents()
            || self
                .probs
                .iter()
                .any(|a| a.len() != mdp.n_observations() || a.iter().any(|d| d.len() != mdp.n_actions()))
        {
            return Err(contract("joint policy shape does not match the model"));
        }
        Ok(())
    }
}

/// Exact evaluation of a joint policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEval {
    pub v: Vec<f64>,
    /// `q[s * n_joint + a]`.
    pub q: Vec<f64>,
    /// `A = Q - V`, same layout as `q`.
    pub advantage: Vec<f64>,
    /// Unnormalized discounted visitation `sum_t gamma^t P(s_t = s)`.
    pub rho: Vec<f64>,
    pub j: f64,
    /// Horizon used when the evaluation was truncated instead of solved.
    pub horizon: Option<usize>,
    /// Certified bound on the truncated tail; zero for linear solves.
    pub tail_bound: f64,
}

/// `(R_pi, P_pi)` of the Markov chain induced by `pi`.
fn induced_chain(mdp: &TabularDecPomdp, pi: &JointPolicy) -> (DVector<f64>, DMatrix<f64>) {
    let n = mdp.n_states();
    let mut r = DVector::zeros(n);
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_joint() {
            let w = pi.joint_prob(mdp, s, a);
            r[s] += w * mdp.reward(s, a);
            for (s2, &t) in mdp.transition_row(s, a).iter().enumerate() {
                p[(s, s2)] += w * t;
            }
        }
    }
    (r, p)
}

fn q_from_v(mdp: &TabularDecPomdp, v: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(mdp.n_states() * mdp.n_joint());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_joint() {
            let next: f64 = mdp.transition_row(s, a).iter().zip(v).map(|(t, x)| t * x).sum();
            q.push(mdp.reward(s, a) + mdp.gamma() * next);
        }
    }
    q
}

fn finish(mdp: &TabularDecPomdp, v: Vec<f64>, rho: Vec<f64>, horizon: Option<usize>, tail_bound: f64) -> ExactEval {
    let q = q_from_v(mdp, &v);
    let nj = mdp.n_joint();
    let advantage = q.iter().enumerate().map(|(k, x)| x - v[k / nj]).collect();
    let j = mdp.initial().iter().zip(&v).map(|(m, x)| m * x).sum();
    ExactEval {
        v,
        q,
        advantage,
        rho,
        j,
        horizon,
        tail_bound,
    }
}

/// Solves `V = R_pi + gamma P_pi V` and `(I - gamma P_pi)^T rho = mu_0` by LU.
pub fn evaluate(mdp: &TabularDecPomdp, pi: &JointPolicy) -> Result<ExactEval> {
    pi.check(mdp)?;
    let n = mdp.n_states();
    let (r, p) = induced_chain(mdp, pi);
    let m = DMatrix::identity(n, n) - p * mdp.gamma();
    let lu = m.clone().lu();
    let v = lu
        .solve(&r)
        .ok_or_else(|| Error::Singular("I - gamma P_pi is singular".into()))?;
    let mu = DVector::from_column_slice(mdp.initial());
    let rho = m
        .transpose()
        .lu()
        .solve(&mu)
        .ok_or_else(|| Error::Singular("(I - gamma P_pi)^T is singular".into()))?;
    Ok(finish(mdp, v.iter().copied().collect(), rho.iter().copied().collect(), None, 0.0))
}

/// Evaluation by summing the series until `gamma^T R_max / (1 - gamma) < tol`.
pub fn evaluate_truncated(mdp: &TabularDecPomdp, pi: &JointPolicy, tol: f64) -> Result<ExactEval> {
    pi.check(mdp)?;
    let gamma = mdp.gamma();
    if !(gamma < 1.0) || !(tol > 0.0) {
        return Err(Error::Singular("truncation needs gamma < 1 and a positive tolerance".into()));
    }
    let (r, p) = induced_chain(mdp, pi);
    let r_max = mdp.max_abs_reward().max(f64::MIN_POSITIVE);
    let mut horizon = 0usize;
    while gamma.powi(horizon as i32) * r_max / (1.0 - gamma) >= tol {
        horizon += 1;
    }
    let n = mdp.n_states();
    let mut v = DVector::zeros(n);
    let mut d = DVector::from_column_slice(mdp.initial());
    let mut rho = DVector::zeros(n);
    let mut discount = 1.0;
    for _ in 0..horizon {
        v = &r + (&p * &v) * gamma;
        rho += &d * discount;
        d = p.transpose() * d;
        discount *= gamma;
    }
    let tail = gamma.powi(horizon as i32) * r_max / (1.0 - gamma);
    Ok(finish(
        mdp,
        v.iter().copied().collect(),
        rho.iter().copied().collect(),
        Some(horizon),
        tail,
    ))
}

/// `J(pi) = E_{s_0}[V^pi(s_0)]` by linear solve.
pub fn exact_performance(mdp: &TabularDecPomdp, pi: &JointPolicy) -> Result<f64> {
    evaluate(mdp, pi).map(|e| e.j)
}

/// `max_s |V(s) - R_pi(s) - gamma (P_pi V)(s)|`.
pub fn bellman_residual(mdp: &TabularDecPomdp, pi: &JointPolicy, v: &[f64]) -> f64 {
    let (r, p) = induced_chain(mdp, pi);
    let v = DVector::from_column_slice(v);
    let res = &v - &r - (&p * &v) * mdp.gamma();
    res.amax()
}

/// `sum_s rho(s) sum_a pi(a | s) A(s, a)`.
pub fn expected_advantage(mdp: &TabularDecPomdp, pi: &JointPolicy, rho: &[f64], advantage: &[f64]) -> f64 {
    let nj = mdp.n_joint();
    (0..mdp.n_states())
        .map(|s| {
            rho[s]
                * (0..nj)
                    .map(|a| pi.joint_prob(mdp, s, a) * advantage[s * nj + a])
                    .sum::<f64>()
        })
        .sum()
}

/// `|J(pi~) - J(pi) - sum_s rho^{pi~}(s) sum_a pi~(a | s) A^pi(s, a)|`.
pub fn perf_difference_check(mdp: &TabularDecPomdp, pi: &JointPolicy, pi_new: &JointPolicy) -> Result<f64> {
    let old = evaluate(mdp, pi)?;
    let new = evaluate(mdp, pi_new)?;
    let rhs = expected_advantage(mdp, pi_new, &new.rho, &old.advantage);
    Ok((new.j - old.j - rhs).abs())
}

/// `J~_pi(pi~) = J(pi) + sum_s rho^pi(s) sum_a pi~(a | s) A^pi(s, a)`.
pub fn surrogate(mdp: &TabularDecPomdp, pi: &JointPolicy, pi_new: &JointPolicy) -> Result<f64> {
    let old = evaluate(mdp, pi)?;
    Ok(old.j + expected_advantage(mdp, pi_new, &old.rho, &old.advantage))
}

fn tabular_logits(policies: &[AgentPolicy]) -> Result<()> {
    if policies.iter().any(|p| p.architecture() != Architecture::TabularSoftmax) {
        return Err(contract("first-order check needs tabular-softmax policies"));
    }
    Ok(())
}

/// Gradient of the surrogate `J~_theta(theta~)` at `theta~ = theta`, analytically,
/// flattened agent by agent in parameter order.
pub fn surrogate_gradient(mdp: &TabularDecPomdp, policies: &[AgentPolicy]) -> Result<Vec<f64>> {
    tabular_logits(policies)?;
    let pi = JointPolicy::from_policies(policies)?;
    let eval = evaluate(mdp, &pi)?;
    let nj = mdp.n_joint();
    let m = mdp.n_actions();
    let space = mdp.joint_space();
    let mut grads: Vec<Vec<f64>> = policies.iter().map(|p| vec![0.0; p.params().len()]).collect();
    for s in 0..mdp.n_states() {
        for a in 0..nj {
            let w = eval.rho[s] * eval.advantage[s * nj + a] * pi.joint_prob(mdp, s, a);
            let joint = space.decode(a);
            for (i, g) in grads.iter_mut().enumerate() {
                let o = mdp.observation(s, i);
                for b in 0..m {
                    let indicator = if joint[i] == b { 1.0 } else { 0.0 };
                    g[o * m + b] += w * (indicator - pi.probs[i][o][b]);
                }
            }
        }
    }
    Ok(grads.concat())
}

/// Central finite-difference gradient of exact `J(theta)`.
pub fn performance_gradient_fd(mdp: &TabularDecPomdp, policies: &[AgentPolicy], step: f64) -> Result<Vec<f64>> {
    tabular_logits(policies)?;
    let mut out = Vec::new();
    for i in 0..policies.len() {
        for k in 0..policies[i].params().len() {
            let eval_at = |d: f64| -> Result<f64> {
                let mut ps = policies.to_vec();
                ps[i].params_mut()[k] += d;
                exact_performance(mdp, &JointPolicy::from_policies(&ps)?)
            };
            out.push((eval_at(step)? - eval_at(-step)?) / (2.0 * step));
        }
    }
    Ok(out)
}

/// Largest componentwise relative gap `|a - b| / max(|a|, |b|, 1e-6)` between
/// the surrogate gradient and finite differences of `J`.
pub fn first_order_check(mdp: &TabularDecPomdp, policies: &[AgentPolicy], step: f64) -> Result<f64> {
    let analytic = surrogate_gradient(mdp, policies)?;
    let fd = performance_gradient_fd(mdp, policies, step)?;
    Ok(analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max))
}
