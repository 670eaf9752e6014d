//! Cooperative environments: one-shot matrix games and small enumerable Dec-POMDPs.
//!
//! Every environment shares a single team reward. Joint actions are encoded
//! row-major with agent 0 as the most significant digit, so the joint action
//! `(a0, a1, .., a_{n-1})` of `n` agents with `m` actions each maps to
//! `sum_i a_i * m^(n-1-i)`.

mod matrix;
mod tabular;

pub use matrix::{battery_games, game_by_id, list_games, penalty_game, MatchPattern, MatrixGameEnv, MatrixGameSpec, GAME_IDS};
pub use tabular::{fixture, TabularDecPomdp, TabularEnv, FIXTURE_IDS};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Row-major encoder/decoder for joint actions of agents sharing one action count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointActionSpace {
    pub n_agents: usize,
    pub n_actions: usize,
}

impl JointActionSpace {
    pub fn new(n_agents: usize, n_actions: usize) -> Self {
        Self { n_agents, n_actions }
    }

    /// Number of joint actions, `n_actions ^ n_agents`.
    pub fn size(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    pub fn encode(&self, joint: &[usize]) -> usize {
        joint.iter().fold(0, |acc, &a| acc * self.n_actions + a)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut joint = vec![0; self.n_agents];
        for slot in joint.iter_mut().rev() {
            *slot = index % self.n_actions;
            index /= self.n_actions;
        }
        joint
    }

    /// Index of the joint action obtained by replacing agent `agent`'s action with `action`.
    pub fn substitute(&self, joint_index: usize, agent: usize, action: usize) -> usize {
        let stride = self.n_actions.pow((self.n_agents - 1 - agent) as u32);
        let current = (joint_index / stride) % self.n_actions;
        joint_index - current * stride + action * stride
    }

    pub fn check(&self, joint: &[usize]) -> Result<()> {
        if joint.len() != self.n_agents {
            return Err(contract(format!(
                "joint action has {} entries, expected {}",
                joint.len(),
                self.n_agents
            )));
        }
        if let Some((agent, &a)) = joint.iter().enumerate().find(|(_, &a)| a >= self.n_actions) {
            return Err(contract(format!(
                "agent {agent} played action {a}, valid range is 0..{}",
                self.n_actions
            )));
        }
        Ok(())
    }
}

/// One environment step as seen by the centralized trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Global state the step started from (available to centralized critics only).
    pub state: usize,
    pub observations: Vec<usize>,
    pub joint_action: Vec<usize>,
    pub reward: f64,
    pub next_state: usize,
    pub next_observations: Vec<usize>,
    pub terminal: bool,
}

/// A cooperative multi-agent environment with discrete observations and actions.
///
/// Observations are identifiers in `0..n_observations()`; policies encode them
/// as table rows or one-hot network inputs.
pub trait Environment {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn n_observations(&self) -> usize;
    fn n_states(&self) -> usize;

    /// Starts a new episode and returns each agent's observation.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<usize>;

    /// Current global state, or `None` when no episode is in progress.
    fn state(&self) -> Option<usize>;

    fn observations(&self) -> Option<Vec<usize>>;

    fn step(&mut self, joint_action: &[usize], rng: &mut dyn RngCore) -> Result<Transition>;

    fn joint_space(&self) -> JointActionSpace {
        JointActionSpace::new(self.n_agents(), self.n_actions())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_are_inverse() {
        let space = JointActionSpace::new(4, 9);
        for idx in [0, 1, 8, 9, 729, 6560] {
            assert_eq!(space.encode(&space.decode(idx)), idx);
        }
        assert_eq!(space.encode(&[0, 0, 0, 1]), 1);
        assert_eq!(space.encode(&[1, 0, 0, 0]), 729);
    }

    #[test]
    fn substitute_replaces_one_digit() {
        let space = JointActionSpace::new(3, 4);
        let idx = space.encode(&[1, 2, 3]);
        assert_eq!(space.decode(space.substitute(idx, 1, 0)), vec![1, 0, 3]);
        assert_eq!(space.decode(space.substitute(idx, 0, 3)), vec![3, 2, 3]);
    }

    #[test]
    fn check_rejects_out_of_range() {
        let space = JointActionSpace::new(2, 3);
        assert!(space.check(&[0, 2]).is_ok());
        assert!(space.check(&[0, 3]).is_err());
        assert!(space.check(&[0]).is_err());
    }
}
