use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, JointActionSpace, Transition};
use crate::error::{config, contract, Result};
use crate::util::sample_categorical;

pub const MAX_STATES: usize = 20;
pub const MAX_AGENTS: usize = 3;
pub const MAX_ACTIONS: usize = 4;

/// Fixture identifiers accepted by [`fixture`].
pub const FIXTURE_IDS: [&str; 3] = ["chain", "triad", "quad"];

/// A Dec-POMDP small enough to enumerate every state and joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDecPomdp {
    n_states: usize,
    n_agents: usize,
    n_actions: usize,
    n_observations: usize,
    /// `observation[s * n_agents + i]` is agent `i`'s observation in state `s`.
    observation: Vec<usize>,
    /// `transition[(s * n_joint + a) * n_states + s']`.
    transition: Vec<f64>,
    /// `reward[s * n_joint + a]`.
    reward: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
}

impl TabularDecPomdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_agents: usize,
        n_actions: usize,
        n_observations: usize,
        observation: Vec<usize>,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_states > MAX_STATES {
            return Err(config(format!("state count {n_states} outside 1..={MAX_STATES}")));
        }
        if n_agents == 0 || n_agents > MAX_AGENTS {
            return Err(config(format!("agent count {n_agents} outside 1..={MAX_AGENTS}")));
        }
        if n_actions == 0 || n_actions > MAX_ACTIONS {
            return Err(config(format!("action count {n_actions} outside 1..={MAX_ACTIONS}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(config(format!("discount {gamma} outside [0, 1)")));
        }
        let n_joint = n_actions.pow(n_agents as u32);
        if observation.len() != n_states * n_agents || observation.iter().any(|&o| o >= n_observations) {
            return Err(config("observation map has the wrong shape or out-of-range ids"));
        }
        if transition.len() != n_states * n_joint * n_states || reward.len() != n_states * n_joint {
            return Err(config("transition or reward table has the wrong shape"));
        }
        for (row, probs) in transition.chunks(n_states).enumerate() {
            let total: f64 = probs.iter().sum();
            if probs.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(config(format!("transition row {row} is not a distribution (sum {total})")));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(config("reward table contains non-finite entries"));
        }
        let init_total: f64 = initial.iter().sum();
        if initial.len() != n_states || initial.iter().any(|&p| p < 0.0) || (init_total - 1.0).abs() > 1e-12 {
            return Err(config("initial-state distribution is invalid"));
        }
        Ok(Self {
            n_states,
            n_agents,
            n_actions,
            n_observations,
            observation,
            transition,
            reward,
            gamma,
            initial,
        })
    }

    /// Random fully observable fixture: observation equals state, dense stochastic
    /// transitions, rewards uniform in [-1, 1].
    pub fn random_fully_observable(
        n_states: usize,
        n_agents: usize,
        n_actions: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_joint = n_actions.pow(n_agents as u32);
        let mut transition = Vec::with_capacity(n_states * n_joint * n_states);
        for _ in 0..n_states * n_joint {
            let raw: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
            transition.extend(normalized(&raw));
        }
        let reward = (0..n_states * n_joint).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw_init: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
        let observation = (0..n_states).flat_map(|s| std::iter::repeat_n(s, n_agents)).collect();
        Self::new(
            n_states,
            n_agents,
            n_actions,
            n_states,
            observation,
            transition,
            reward,
            gamma,
            normalized(&raw_init),
        )
    }

    /// Single state that always transitions to itself and pays `reward` for any action.
    pub fn single_state(n_agents: usize, n_actions: usize, reward: f64, gamma: f64) -> Result<Self> {
        let n_joint = n_actions.pow(n_agents as u32);
        Self::new(
            1,
            n_agents,
            n_actions,
            1,
            vec![0; n_agents],
            vec![1.0; n_joint],
            vec![reward; n_joint],
            gamma,
            vec![1.0],
        )
    }

    /// Replaces the reward table, keeping dynamics.
    pub fn with_rewards(mut self, reward: Vec<f64>) -> Result<Self> {
        if reward.len() != self.reward.len() || reward.iter().any(|r| !r.is_finite()) {
            return Err(config("replacement reward table has the wrong shape"));
        }
        self.reward = reward;
        Ok(self)
    }

    /// Replaces the transition kernel, keeping rewards.
    pub fn with_transitions(self, transition: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_agents,
            self.n_actions,
            self.n_observations,
            self.observation,
            transition,
            self.reward,
            self.gamma,
            self.initial,
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    pub fn n_joint(&self) -> usize {
        self.joint_space().size()
    }

    pub fn joint_space(&self) -> JointActionSpace {
        JointActionSpace::new(self.n_agents, self.n_actions)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn observation(&self, state: usize, agent: usize) -> usize {
        self.observation[state * self.n_agents + agent]
    }

    pub fn observations_of(&self, state: usize) -> Vec<usize> {
        self.observation[state * self.n_agents..(state + 1) * self.n_agents].to_vec()
    }

    pub fn reward(&self, state: usize, joint_index: usize) -> f64 {
        self.reward[state * self.n_joint() + joint_index]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Distribution over next states for `(state, joint_index)`.
    pub fn transition_row(&self, state: usize, joint_index: usize) -> &[f64] {
        let start = (state * self.n_joint() + joint_index) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // Push the rounding residue into the largest entry so the row sums to 1 within an ulp or two.
    let residue = 1.0 - out.iter().sum::<f64>();
    let argmax = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
    out[argmax] += residue;
    out
}

/// Named fixtures for the exact theory checks.
///
/// * `chain`: 2 states, 2 agents, 2 actions.
/// * `triad`: 3 states, 3 agents, 2 actions.
/// * `quad`: 4 states, 2 agents, 3 actions.
///
/// All use discount 0.9 and are fully observable.
pub fn fixture(id: &str, seed: u64) -> Result<TabularDecPomdp> {
    match id {
        "chain" => TabularDecPomdp::random_fully_observable(2, 2, 2, 0.9, seed),
        "triad" => TabularDecPomdp::random_fully_observable(3, 3, 2, 0.9, seed),
        "quad" => TabularDecPomdp::random_fully_observable(4, 2, 3, 0.9, seed),
        other => Err(config(format!(
            "unknown fixture '{other}' (known: {})",
            FIXTURE_IDS.join(", ")
        ))),
    }
}

/// Episodic wrapper that samples dynamics from a [`TabularDecPomdp`]. Episodes never
/// terminate on their own; the trainer truncates them at rollout boundaries.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    model: TabularDecPomdp,
    state: Option<usize>,
}

impl TabularEnv {
    pub fn new(model: TabularDecPomdp) -> Self {
        Self { model, state: None }
    }

    pub fn model(&self) -> &TabularDecPomdp {
        &self.model
    }

    /// Forces the current state, for tests and exact rollouts.
    pub fn set_state(&mut self, state: usize) -> Result<()> {
        if state >= self.model.n_states {
            return Err(contract(format!("state {state} out of range")));
        }
        self.state = Some(state);
        Ok(())
    }
}

impl Environment for TabularEnv {
    fn n_agents(&self) -> usize {
        self.model.n_agents
    }

    fn n_actions(&self) -> usize {
        self.model.n_actions
    }

    fn n_observations(&self) -> usize {
        self.model.n_observations
    }

    fn n_states(&self) -> usize {
        self.model.n_states
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<usize> {
        let s = sample_categorical(&self.model.initial, rng);
        self.state = Some(s);
        self.model.observations_of(s)
    }

    fn state(&self) -> Option<usize> {
        self.state
    }

    fn observations(&self) -> Option<Vec<usize>> {
        self.state.map(|s| self.model.observations_of(s))
    }

    fn step(&mut self, joint_action: &[usize], rng: &mut dyn RngCore) -> Result<Transition> {
        let state = self.state.ok_or_else(|| contract("tabular env stepped before reset"))?;
        let space = self.model.joint_space();
        space.check(joint_action)?;
        let joint_index = space.encode(joint_action);
        let next_state = sample_categorical(self.model.transition_row(state, joint_index), rng);
        self.state = Some(next_state);
        Ok(Transition {
            state,
            observations: self.model.observations_of(state),
            joint_action: joint_action.to_vec(),
            reward: self.model.reward(state, joint_index),
            next_state,
            next_observations: self.model.observations_of(next_state),
            terminal: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid_distributions() {
        for id in FIXTURE_IDS {
            let m = fixture(id, 7).unwrap();
            for s in 0..m.n_states() {
                for a in 0..m.n_joint() {
                    let total: f64 = m.transition_row(s, a).iter().sum();
                    assert!((total - 1.0).abs() <= 1e-12);
                }
            }
            assert!(m.gamma() < 1.0);
        }
        assert!(fixture("nope", 0).is_err());
    }

    #[test]
    fn rejects_bad_rows_and_discount() {
        let m = TabularDecPomdp::single_state(1, 2, 1.0, 0.9).unwrap();
        assert!(m.clone().with_transitions(vec![0.5, 1.0]).is_err());
        assert!(TabularDecPomdp::single_state(1, 2, 1.0, 1.0).is_err());
        assert!(TabularDecPomdp::random_fully_observable(21, 1, 2, 0.9, 0).is_err());
    }

    #[test]
    fn degenerate_kernel_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut env = TabularEnv::new(TabularDecPomdp::single_state(2, 2, 3.0, 0.9).unwrap());
        env.reset(&mut rng);
        for a in [[0, 0], [1, 0], [1, 1]] {
            let t = env.step(&a, &mut rng).unwrap();
            assert_eq!((t.state, t.next_state, t.reward), (0, 0, 3.0));
        }
        assert!(env.step(&[2, 0], &mut rng).is_err());
    }

    #[test]
    fn identity_rows_keep_state() {
        let m = fixture("quad", 3).unwrap();
        let (ns, nj) = (m.n_states(), m.n_joint());
        let mut identity = vec![0.0; ns * nj * ns];
        for s in 0..ns {
            for a in 0..nj {
                identity[(s * nj + a) * ns + s] = 1.0;
            }
        }
        let mut env = TabularEnv::new(m.with_transitions(identity).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        env.reset(&mut rng);
        for s in 0..ns {
            env.set_state(s).unwrap();
            let t = env.step(&[2, 1], &mut rng).unwrap();
            assert_eq!(t.next_state, s);
            assert_eq!(t.next_observations, vec![s, s]);
        }
    }

    #[test]
    fn sampled_frequencies_match_kernel() {
        let m = fixture("chain", 11).unwrap();
        let mut env = TabularEnv::new(m.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        env.reset(&mut rng);
        let draws = 100_000;
        for s in 0..m.n_states() {
            for a in 0..m.n_joint() {
                let joint = m.joint_space().decode(a);
                let mut counts = vec![0usize; m.n_states()];
                for _ in 0..draws {
                    env.set_state(s).unwrap();
                    counts[env.step(&joint, &mut rng).unwrap().next_state] += 1;
                }
                for (sp, &c) in counts.iter().enumerate() {
                    let p = m.transition_row(s, a)[sp];
                    let sigma = (p * (1.0 - p) / draws as f64).sqrt();
                    let freq = c as f64 / draws as f64;
                    assert!((freq - p).abs() <= 3.0 * sigma + 1e-12, "s={s} a={a} s'={sp}: {freq} vs {p}");
                }
            }
        }
    }
}
