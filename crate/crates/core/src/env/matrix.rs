use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Environment, JointActionSpace, Transition};
use crate::error::{config, contract, Error, Result};

/// Identifiers of the built-in games, in `list-games` order.
pub const GAME_IDS: [&str; 7] = [
    "penalty",
    "penalty-free",
    "high-reward",
    "one-optimal",
    "climbing",
    "climbing-penalty",
    "climbing-escalating",
];

/// A one-shot cooperative game: every agent picks an action, the team receives one reward.
///
/// Rewards are stored densely in row-major joint-action order. The JSON form is
/// `{"n_agents": .., "n_actions": .., "rewards": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameDocument", into = "GameDocument")]
pub struct MatrixGameSpec {
    name: String,
    n_agents: usize,
    n_actions: usize,
    rewards: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameDocument {
    n_agents: usize,
    n_actions: usize,
    rewards: Vec<f64>,
}

impl TryFrom<GameDocument> for MatrixGameSpec {
    type Error = Error;

    fn try_from(doc: GameDocument) -> Result<Self> {
        MatrixGameSpec::from_rewards("custom", doc.n_agents, doc.n_actions, doc.rewards)
    }
}

impl From<MatrixGameSpec> for GameDocument {
    fn from(spec: MatrixGameSpec) -> Self {
        GameDocument {
            n_agents: spec.n_agents,
            n_actions: spec.n_actions,
            rewards: spec.rewards,
        }
    }
}

/// How a joint action's agents line up, used by the penalty-style reward rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchPattern {
    /// Every agent played `action`.
    AllMatch { action: usize },
    /// All agents but `deviant` played `common`; `deviant` played something else.
    NearMiss { common: usize, deviant: usize },
    Other,
}

impl MatchPattern {
    pub fn classify(joint: &[usize]) -> Self {
        let n = joint.len();
        if n == 0 {
            return MatchPattern::Other;
        }
        if joint.iter().all(|&a| a == joint[0]) {
            return MatchPattern::AllMatch { action: joint[0] };
        }
        if n < 2 {
            return MatchPattern::Other;
        }
        // At most two distinct candidates can be shared by n-1 agents; checking the
        // first two entries covers them both.
        for &candidate in &joint[..2] {
            let count = joint.iter().filter(|&&a| a == candidate).count();
            if count == n - 1 {
                let deviant = joint.iter().position(|&a| a != candidate).unwrap();
                return MatchPattern::NearMiss { common: candidate, deviant };
            }
        }
        MatchPattern::Other
    }
}

impl MatrixGameSpec {
    pub fn from_rewards(name: &str, n_agents: usize, n_actions: usize, rewards: Vec<f64>) -> Result<Self> {
        if n_agents == 0 || n_actions == 0 {
            return Err(config("matrix game needs at least one agent and one action"));
        }
        let expected = n_actions
            .checked_pow(n_agents as u32)
            .ok_or_else(|| config("joint action space too large"))?;
        if rewards.len() != expected {
            return Err(config(format!(
                "reward table has {} entries, expected {expected}",
                rewards.len()
            )));
        }
        if let Some(k) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(config(format!("reward for joint action {k} is not finite")));
        }
        Ok(Self {
            name: name.to_string(),
            n_agents,
            n_actions,
            rewards,
        })
    }

    /// Builds a game by evaluating `rule` on every joint action.
    pub fn from_rule(name: &str, n_agents: usize, n_actions: usize, rule: impl Fn(&[usize]) -> f64) -> Self {
        let space = JointActionSpace::new(n_agents, n_actions);
        let rewards = (0..space.size()).map(|k| rule(&space.decode(k))).collect();
        Self {
            name: name.to_string(),
            n_agents,
            n_actions,
            rewards,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn joint_space(&self) -> JointActionSpace {
        JointActionSpace::new(self.n_agents, self.n_actions)
    }

    /// Dense reward table in row-major joint-action order.
    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn reward(&self, joint: &[usize]) -> Result<f64> {
        let space = self.joint_space();
        space.check(joint)?;
        Ok(self.rewards[space.encode(joint)])
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn penalty_rule(matched: f64, near_miss: impl Fn(usize) -> f64, other: f64) -> impl Fn(&[usize]) -> f64 {
    move |joint| match MatchPattern::classify(joint) {
        MatchPattern::AllMatch { .. } => matched,
        MatchPattern::NearMiss { common, .. } => near_miss(common),
        MatchPattern::Other => other,
    }
}

/// The penalty game: 50 when all agents agree, -50 when exactly one agent breaks an
/// otherwise unanimous choice, -40 for every other joint action.
pub fn penalty_game(n_agents: usize, n_actions: usize) -> MatrixGameSpec {
    MatrixGameSpec::from_rule("penalty", n_agents, n_actions, penalty_rule(50.0, |_| -50.0, -40.0))
}

fn climbing_base(name: &str, near_miss: impl Fn(usize) -> f64) -> MatrixGameSpec {
    // Actions are labelled 1..=9 in the reward rule; index k carries label k + 1.
    MatrixGameSpec::from_rule(name, 4, 9, move |joint| match MatchPattern::classify(joint) {
        MatchPattern::AllMatch { action } => 10.0 * (action + 1) as f64,
        MatchPattern::NearMiss { common, .. } => near_miss(common),
        MatchPattern::Other => -40.0,
    })
}

/// The six four-agent, nine-action variants used for the broader comparison:
/// penalty-free, high-reward, one-optimal, climbing, climbing with a -50
/// miscoordination penalty and climbing with an escalating penalty.
pub fn battery_games() -> Vec<MatrixGameSpec> {
    vec![
        MatrixGameSpec::from_rule("penalty-free", 4, 9, penalty_rule(50.0, |_| -40.0, -40.0)),
        MatrixGameSpec::from_rule("high-reward", 4, 9, penalty_rule(100.0, |_| -50.0, -40.0)),
        MatrixGameSpec::from_rule("one-optimal", 4, 9, |joint| {
            if joint.iter().enumerate().all(|(i, &a)| a == i) {
                50.0
            } else {
                -50.0
            }
        }),
        climbing_base("climbing", |_| -40.0),
        climbing_base("climbing-penalty", |_| -50.0),
        climbing_base("climbing-escalating", |common| -10.0 * (common + 1) as f64),
    ]
}

pub fn game_by_id(id: &str) -> Result<MatrixGameSpec> {
    if id == "penalty" {
        return Ok(penalty_game(4, 9));
    }
    battery_games()
        .into_iter()
        .find(|g| g.name() == id)
        .ok_or_else(|| config(format!("unknown game '{id}' (known: {})", GAME_IDS.join(", "))))
}

/// All built-in games with their identifiers.
pub fn list_games() -> Vec<MatrixGameSpec> {
    let mut games = vec![penalty_game(4, 9)];
    games.extend(battery_games());
    games
}

/// A matrix game wrapped as a one-step episodic environment with a constant dummy observation.
#[derive(Debug, Clone)]
pub struct MatrixGameEnv {
    spec: MatrixGameSpec,
    active: bool,
}

impl MatrixGameEnv {
    pub fn new(spec: MatrixGameSpec) -> Self {
        Self { spec, active: false }
    }

    pub fn spec(&self) -> &MatrixGameSpec {
        &self.spec
    }
}

impl Environment for MatrixGameEnv {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    fn n_observations(&self) -> usize {
        1
    }

    fn n_states(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<usize> {
        self.active = true;
        vec![0; self.spec.n_agents]
    }

    fn state(&self) -> Option<usize> {
        self.active.then_some(0)
    }

    fn observations(&self) -> Option<Vec<usize>> {
        self.active.then(|| vec![0; self.spec.n_agents])
    }

    fn step(&mut self, joint_action: &[usize], _rng: &mut dyn RngCore) -> Result<Transition> {
        if !self.active {
            return Err(contract("matrix game stepped after its single step; call reset first"));
        }
        let reward = self.spec.reward(joint_action)?;
        self.active = false;
        Ok(Transition {
            state: 0,
            observations: vec![0; self.spec.n_agents],
            joint_action: joint_action.to_vec(),
            reward,
            next_state: 0,
            next_observations: vec![0; self.spec.n_agents],
            terminal: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn penalty_game_examples() {
        let g = penalty_game(4, 9);
        assert_eq!(g.reward(&[3, 3, 3, 3]).unwrap(), 50.0);
        assert_eq!(g.reward(&[3, 3, 3, 5]).unwrap(), -50.0);
        assert_eq!(g.reward(&[0, 2, 2, 2]).unwrap(), -50.0);
        assert_eq!(g.reward(&[3, 3, 5, 5]).unwrap(), -40.0);
        assert_eq!(g.reward(&[0, 1, 2, 3]).unwrap(), -40.0);
    }

    #[test]
    fn penalty_game_exhaustive_classes() {
        let g = penalty_game(4, 9);
        let space = g.joint_space();
        let (mut all, mut three, mut other) = (0, 0, 0);
        for k in 0..space.size() {
            let joint = space.decode(k);
            let mut counts = [0usize; 9];
            for &a in &joint {
                counts[a] += 1;
            }
            let max = *counts.iter().max().unwrap();
            let expected = match max {
                4 => {
                    all += 1;
                    50.0
                }
                3 => {
                    three += 1;
                    -50.0
                }
                _ => {
                    other += 1;
                    -40.0
                }
            };
            assert_eq!(g.rewards()[k], expected, "joint {joint:?}");
        }
        assert_eq!(all, 9);
        assert_eq!(three, 9 * 4 * 8);
        assert_eq!(all + three + other, 6561);
    }

    #[test]
    fn battery_games_examples() {
        let games = battery_games();
        assert_eq!(games.len(), 6);
        // Action label 3 is index 2; label i is index i - 1.
        assert_eq!(games[3].reward(&[2, 2, 2, 2]).unwrap(), 30.0);
        assert_eq!(games[3].reward(&[6, 6, 6, 6]).unwrap(), 70.0);
        assert_eq!(games[2].reward(&[0, 1, 2, 3]).unwrap(), 50.0);
        assert_eq!(games[2].reward(&[0, 1, 2, 2]).unwrap(), -50.0);
        assert_eq!(games[5].reward(&[4, 4, 4, 0]).unwrap(), -50.0);
        assert_eq!(games[5].reward(&[8, 1, 8, 8]).unwrap(), -90.0);
        assert_eq!(games[0].reward(&[1, 1, 1, 0]).unwrap(), -40.0);
        assert_eq!(games[1].reward(&[1, 1, 1, 1]).unwrap(), 100.0);
        assert_eq!(games[1].reward(&[1, 1, 1, 0]).unwrap(), -50.0);
        assert_eq!(games[4].reward(&[1, 1, 1, 0]).unwrap(), -50.0);
        // Two-way matches are not miscoordination.
        assert_eq!(games[5].reward(&[4, 4, 0, 0]).unwrap(), -40.0);
    }

    #[test]
    fn every_game_is_total_and_finite() {
        for g in list_games() {
            assert_eq!(g.rewards().len(), 6561, "{}", g.name());
            assert!(g.rewards().iter().all(|r| r.is_finite()));
        }
    }

    #[test]
    fn classify_patterns() {
        assert_eq!(MatchPattern::classify(&[1, 1, 1, 1]), MatchPattern::AllMatch { action: 1 });
        assert_eq!(MatchPattern::classify(&[2, 1, 1, 1]), MatchPattern::NearMiss { common: 1, deviant: 0 });
        assert_eq!(MatchPattern::classify(&[1, 1, 2, 1]), MatchPattern::NearMiss { common: 1, deviant: 2 });
        assert_eq!(MatchPattern::classify(&[1, 1, 2, 2]), MatchPattern::Other);
        assert_eq!(MatchPattern::classify(&[7]), MatchPattern::AllMatch { action: 7 });
    }

    #[test]
    fn step_returns_reward_and_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut env = MatrixGameEnv::new(penalty_game(4, 9));
        assert!(env.step(&[0, 0, 0, 0], &mut rng).is_err());
        let obs = env.reset(&mut rng);
        assert_eq!(obs, vec![0; 4]);
        let t = env.step(&[0, 0, 0, 0], &mut rng).unwrap();
        assert_eq!(t.reward, 50.0);
        assert!(t.terminal);
        assert!(env.step(&[0, 0, 0, 0], &mut rng).is_err());
        env.reset(&mut rng);
        assert!(matches!(env.step(&[0, 0, 0, 9], &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn json_document_shape() {
        let g = penalty_game(2, 2);
        let text = g.to_json().unwrap();
        assert_eq!(text, r#"{"n_agents":2,"n_actions":2,"rewards":[50.0,-50.0,-50.0,50.0]}"#);
        let back = MatrixGameSpec::from_json(&text).unwrap();
        assert_eq!(back.rewards(), g.rewards());
        assert!(MatrixGameSpec::from_json(r#"{"n_agents":2,"n_actions":2,"rewards":[1.0]}"#).is_err());
    }

    #[test]
    fn unknown_game_is_config_error() {
        assert!(matches!(game_by_id("nope"), Err(Error::Config(_))));
        for id in GAME_IDS {
            assert_eq!(game_by_id(id).unwrap().name(), id);
        }
    }
}
