//! Action-value tables, counterfactual per-agent advantages, advantage mixing and GAE.

mod critic;
mod mixer;

pub use critic::{fit_critic, CriticKind, CriticModel, TabularCritic};
pub use mixer::{mix_amix, mix_asum, AmixMixer, Mixer};

use serde::{Deserialize, Serialize};

use crate::env::{JointActionSpace, MatrixGameSpec};
use crate::error::{config, contract, Result};

/// `Q(s, a)` over every state and joint action, `values[s * n_joint + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub space: JointActionSpace,
    pub n_states: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn row(&self, state: usize) -> &[f64] {
        let n = self.space.size();
        &self.values[state * n..(state + 1) * n]
    }

    pub fn get(&self, state: usize, joint_index: usize) -> f64 {
        self.values[state * self.space.size() + joint_index]
    }
}

/// Exact action values of a one-step game: `Q(a) = R(a)` regardless of discount.
pub fn exact_q(game: &MatrixGameSpec) -> QTable {
    QTable {
        space: game.joint_space(),
        n_states: 1,
        values: game.rewards().to_vec(),
    }
}

/// Counterfactual advantage of `agent`'s taken action:
/// `Q(s, (a^i, a^-i)) - sum_b pi^i(b) Q(s, (b, a^-i))`, other agents' actions held fixed.
///
/// `q_row` is `Q(s, .)` over joint actions and `agent_probs` is `pi^i(. | tau^i)`.
pub fn counterfactual_advantage(
    q_row: &[f64],
    space: JointActionSpace,
    agent_probs: &[f64],
    joint_index: usize,
    agent: usize,
) -> f64 {
    let baseline: f64 = agent_probs
        .iter()
        .enumerate()
        .map(|(b, &p)| p * q_row[space.substitute(joint_index, agent, b)])
        .sum();
    q_row[joint_index] - baseline
}

/// `V(s) = sum_a pi(a | s) Q(s, a)` for a factored joint policy, by enumeration.
pub fn joint_state_value(q_row: &[f64], space: JointActionSpace, agent_probs: &[Vec<f64>]) -> f64 {
    (0..space.size())
        .map(|k| {
            let joint = space.decode(k);
            let p: f64 = joint.iter().zip(agent_probs).map(|(&a, probs)| probs[a]).product();
            p * q_row[k]
        })
        .sum()
}

/// Per-sample advantages used by one update.
///
/// `per_agent[b][i]` is `A^i` for sample `b`, `weights[b][i]` the mixing weight
/// `c^i`, and `joint[b]` the mixed joint advantage `sum_i c^i A^i (+ bias)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvantageBundle {
    pub joint: Vec<f64>,
    pub per_agent: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl AdvantageBundle {
    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    /// `(prod_{j != i} r^j) * A^i`, agent `agent`'s advantage reweighted by the
    /// other agents' current ratios.
    pub fn modified(&self, sample: usize, agent: usize, ratios: &crate::policy::RatioVector) -> f64 {
        ratios.product_except(agent) * self.per_agent[sample][agent]
    }

    /// Standardizes every agent's advantages to zero mean and unit variance over the batch.
    pub fn standardize(&mut self) {
        if self.per_agent.is_empty() {
            return;
        }
        let n_agents = self.per_agent[0].len();
        for i in 0..n_agents {
            let xs: Vec<f64> = self.per_agent.iter().map(|row| row[i]).collect();
            let (m, s) = mean_std(&xs);
            for row in &mut self.per_agent {
                row[i] = (row[i] - m) / (s + 1e-8);
            }
        }
        let (m, s) = mean_std(&self.joint);
        for x in &mut self.joint {
            *x = (*x - m) / (s + 1e-8);
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = crate::util::mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len().max(1) as f64;
    (m, var.sqrt())
}

/// Generalized advantage estimation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl GaeConfig {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
            return Err(config(format!("GAE needs gamma and lambda in [0, 1], got {gamma}, {lambda}")));
        }
        Ok(Self { gamma, lambda })
    }
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.90,
        }
    }
}

/// GAE over one trajectory segment. `values` carries the bootstrap value at the end,
/// so it has one more entry than `rewards`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    gae_masked(rewards, values, &vec![false; rewards.len()], gamma, lambda)
}

/// GAE that stops bootstrapping and accumulation at steps flagged terminal.
pub fn gae_masked(rewards: &[f64], values: &[f64], terminal: &[bool], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 || terminal.len() != rewards.len() {
        return Err(contract(format!(
            "gae needs values of length T + 1 = {}, got {}",
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let live = if terminal[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        acc = delta + gamma * lambda * live * acc;
        out[t] = acc;
    }
    Ok(out)
}
