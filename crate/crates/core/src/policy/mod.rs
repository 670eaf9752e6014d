//! Per-agent softmax policies, snapshots, probability ratios and divergences.

pub mod autodiff;
pub mod divergence;

pub use divergence::{kl_divergence, tv_divergence};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use self::autodiff::{Tape, Var};
use crate::error::{config, contract, Result};
use crate::util::sample_categorical;

/// Hidden width of the MLP policy used for matrix games.
pub const DEFAULT_HIDDEN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    /// One logit per (observation, action).
    TabularSoftmax,
    /// One-hot observation -> tanh hidden layer -> logits.
    MlpSoftmax { hidden: usize },
}

/// A stochastic policy over discrete actions conditioned on a discrete observation.
///
/// Parameters are one flat vector. For the MLP layout it is `w1` (hidden x obs,
/// row-major), `b1`, `w2` (actions x hidden, row-major), `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    architecture: Architecture,
    n_observations: usize,
    n_actions: usize,
    params: Vec<f64>,
}

impl AgentPolicy {
    /// All-zero parameters: uniform for the tabular policy.
    pub fn zeros(architecture: Architecture, n_observations: usize, n_actions: usize) -> Self {
        let n = Self::param_count(architecture, n_observations, n_actions);
        Self {
            architecture,
            n_observations,
            n_actions,
            params: vec![0.0; n],
        }
    }

    /// Parameters drawn uniformly from `(-scale, scale)`.
    pub fn random(
        architecture: Architecture,
        n_observations: usize,
        n_actions: usize,
        scale: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let mut policy = Self::zeros(architecture, n_observations, n_actions);
        for p in &mut policy.params {
            *p = rng.random_range(-scale..scale);
        }
        policy
    }

    pub fn from_params(
        architecture: Architecture,
        n_observations: usize,
        n_actions: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        if n_observations == 0 || n_actions == 0 {
            return Err(config("policy needs at least one observation and one action"));
        }
        if let Architecture::MlpSoftmax { hidden: 0 } = architecture {
            return Err(config("MLP hidden width must be positive"));
        }
        let expected = Self::param_count(architecture, n_observations, n_actions);
        if params.len() != expected {
            return Err(config(format!("expected {expected} parameters, got {}", params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(config("policy parameters must be finite"));
        }
        Ok(Self {
            architecture,
            n_observations,
            n_actions,
            params,
        })
    }

    pub fn param_count(architecture: Architecture, n_observations: usize, n_actions: usize) -> usize {
        match architecture {
            Architecture::TabularSoftmax => n_observations * n_actions,
            Architecture::MlpSoftmax { hidden } => hidden * n_observations + hidden + n_actions * hidden + n_actions,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(contract("parameter vector length changed"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_obs(&self, obs: usize) -> Result<()> {
        if obs >= self.n_observations {
            return Err(contract(format!(
                "observation {obs} out of range 0..{}",
                self.n_observations
            )));
        }
        Ok(())
    }

    /// Unnormalized action scores for `obs` under `params`.
    fn logits_with(&self, params: &[f64], obs: usize) -> Vec<f64> {
        match self.architecture {
            Architecture::TabularSoftmax => params[obs * self.n_actions..(obs + 1) * self.n_actions].to_vec(),
            Architecture::MlpSoftmax { hidden } => {
                let (w1, rest) = params.split_at(hidden * self.n_observations);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(self.n_actions * hidden);
                // One-hot input selects a column of w1.
                let h: Vec<f64> = (0..hidden)
                    .map(|k| (w1[k * self.n_observations + obs] + b1[k]).tanh())
                    .collect();
                (0..self.n_actions)
                    .map(|a| b2[a] + w2[a * hidden..(a + 1) * hidden].iter().zip(&h).map(|(w, x)| w * x).sum::<f64>())
                    .collect()
            }
        }
    }

    pub fn logits(&self, obs: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        Ok(self.logits_with(&self.params, obs))
    }

    pub fn log_probs(&self, obs: usize) -> Result<Vec<f64>> {
        let logits = self.logits(obs)?;
        Ok(log_softmax(&logits))
    }

    /// Softmax action distribution; every entry is strictly positive.
    pub fn action_probs(&self, obs: usize) -> Result<Vec<f64>> {
        let logits = self.logits(obs)?;
        Ok(softmax(&logits))
    }

    pub fn log_prob(&self, obs: usize, action: usize) -> Result<f64> {
        if action >= self.n_actions {
            return Err(contract(format!("action {action} out of range 0..{}", self.n_actions)));
        }
        Ok(self.log_probs(obs)?[action])
    }

    /// Log-probabilities of every action for `obs`, built on `tape` from parameter leaves.
    pub fn log_probs_on(&self, tape: &mut Tape, params: &[Var], obs: usize) -> Vec<Var> {
        debug_assert_eq!(params.len(), self.params.len());
        let logits: Vec<Var> = match self.architecture {
            Architecture::TabularSoftmax => params[obs * self.n_actions..(obs + 1) * self.n_actions].to_vec(),
            Architecture::MlpSoftmax { hidden } => {
                let (w1, rest) = params.split_at(hidden * self.n_observations);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(self.n_actions * hidden);
                let h: Vec<Var> = (0..hidden)
                    .map(|k| {
                        let pre = tape.add(w1[k * self.n_observations + obs], b1[k]);
                        tape.tanh(pre)
                    })
                    .collect();
                (0..self.n_actions)
                    .map(|a| {
                        let terms: Vec<Var> = w2[a * hidden..(a + 1) * hidden]
                            .iter()
                            .zip(&h)
                            .map(|(&w, &x)| tape.mul(w, x))
                            .collect();
                        let s = tape.sum(&terms);
                        tape.add(s, b2[a])
                    })
                    .collect()
            }
        };
        tape.log_softmax(&logits)
    }

    /// Gradient of `log pi(action | obs)` with respect to the parameters.
    pub fn grad_log_prob(&self, obs: usize, action: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        if action >= self.n_actions {
            return Err(contract(format!("action {action} out of range")));
        }
        let (_, grad) = autodiff::value_and_gradient(&self.params, |tape, leaves| {
            self.log_probs_on(tape, leaves, obs)[action]
        })?;
        Ok(grad)
    }

    /// Gradient of any scalar function of this policy's parameters.
    pub fn gradient<F>(&self, objective: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&mut Tape, &[Var]) -> Var,
    {
        autodiff::value_and_gradient(&self.params, objective).map(|(_, g)| g)
    }

    /// Samples an action: uniform with probability `epsilon`, otherwise from the softmax.
    pub fn sample_action(&self, obs: usize, rng: &mut dyn RngCore, epsilon: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(contract(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let probs = self.action_probs(obs)?;
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..self.n_actions));
        }
        Ok(sample_categorical(&probs, rng))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: AgentPolicy = serde_json::from_str(text)?;
        Self::from_params(raw.architecture, raw.n_observations, raw.n_actions, raw.params)
    }

    /// Little-endian binary form: magic `CPPO`, architecture tag, hidden width,
    /// observation count, action count, parameter count, then the parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (tag, hidden) = match self.architecture {
            Architecture::TabularSoftmax => (0u32, 0u32),
            Architecture::MlpSoftmax { hidden } => (1, hidden as u32),
        };
        let mut out = Vec::with_capacity(24 + 8 * self.params.len());
        out.extend_from_slice(b"CPPO");
        for word in [tag, hidden, self.n_observations as u32, self.n_actions as u32, self.params.len() as u32] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..4] != b"CPPO" {
            return Err(config("not a policy parameter blob"));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
        let architecture = match (word(0), word(1)) {
            (0, _) => Architecture::TabularSoftmax,
            (1, hidden) => Architecture::MlpSoftmax { hidden },
            (tag, _) => return Err(config(format!("unknown architecture tag {tag}"))),
        };
        let n_params = word(4);
        let body = &bytes[24..];
        if body.len() != n_params * 8 {
            return Err(config("parameter blob truncated"));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(architecture, word(2), word(3), params)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - lse).collect()
}

/// Frozen copy of every agent's policy, taken at the start of an update.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    policies: Vec<AgentPolicy>,
}

impl PolicySnapshot {
    pub fn take(policies: &[AgentPolicy]) -> Self {
        Self {
            policies: policies.to_vec(),
        }
    }

    pub fn policies(&self) -> &[AgentPolicy] {
        &self.policies
    }

    pub fn agent(&self, i: usize) -> &AgentPolicy {
        &self.policies[i]
    }

    pub fn n_agents(&self) -> usize {
        self.policies.len()
    }
}

/// Per-agent probability ratios `pi_new(a^j | o^j) / pi_old(a^j | o^j)` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioVector(pub Vec<f64>);

impl RatioVector {
    /// Product over all agents except `agent`; the empty product is 1.
    pub fn product_except(&self, agent: usize) -> f64 {
        self.0
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .map(|(_, r)| r)
            .product()
    }

    pub fn product(&self) -> f64 {
        self.0.iter().product()
    }
}

/// Probability ratios of the current policies against a snapshot for one sample.
pub fn ratio(
    current: &[AgentPolicy],
    snapshot: &PolicySnapshot,
    observations: &[usize],
    joint_action: &[usize],
) -> Result<RatioVector> {
    if current.len() != snapshot.n_agents()
        || observations.len() != current.len()
        || joint_action.len() != current.len()
    {
        return Err(contract("ratio inputs disagree on the number of agents"));
    }
    let mut out = Vec::with_capacity(current.len());
    for (j, policy) in current.iter().enumerate() {
        let old = snapshot.agent(j);
        if old.architecture != policy.architecture || old.params.len() != policy.params.len() {
            return Err(contract(format!("agent {j}: snapshot architecture differs")));
        }
        let new_lp = policy.log_prob(observations[j], joint_action[j])?;
        let old_lp = old.log_prob(observations[j], joint_action[j])?;
        out.push((new_lp - old_lp).exp());
    }
    Ok(RatioVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_logits_are_uniform() {
        let p = AgentPolicy::zeros(Architecture::TabularSoftmax, 1, 9);
        for x in p.action_probs(0).unwrap() {
            assert!((x - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let p = AgentPolicy::from_params(Architecture::TabularSoftmax, 1, 2, vec![2f64.ln(), 0.0]).unwrap();
        let probs = p.action_probs(0).unwrap();
        assert!((probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((probs[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mlp_forward_matches_hand_oracle() {
        // Hidden width 2, 2 observations, 2 actions; weights chosen by hand.
        // obs = 1 selects w1[:, 1] = (0.5, -0.25); h = tanh((0.5, -0.25) + b1(0.1, 0.2))
        //   = tanh(0.6), tanh(-0.05) = 0.5370495669980353, -0.04995837495787998
        // logits = w2 h + b2 with w2 = [[1, 2], [-1, 0.5]], b2 = (0, 0.3)
        let params = vec![
            0.0, 0.5, 0.0, -0.25, // w1 (2 x 2)
            0.1, 0.2, // b1
            1.0, 2.0, -1.0, 0.5, // w2 (2 x 2)
            0.0, 0.3, // b2
        ];
        let p = AgentPolicy::from_params(Architecture::MlpSoftmax { hidden: 2 }, 2, 2, params).unwrap();
        let h0 = 0.6f64.tanh();
        let h1 = (-0.05f64).tanh();
        assert!((h0 - 0.537_049_566_998_035_3).abs() < 1e-15);
        assert!((h1 + 0.049_958_374_957_879_98).abs() < 1e-15);
        let l0 = h0 + 2.0 * h1;
        let l1 = -h0 + 0.5 * h1 + 0.3;
        let logits = p.logits(1).unwrap();
        assert!((logits[0] - l0).abs() < 1e-15 && (logits[1] - l1).abs() < 1e-15);
        let p0 = 1.0 / (1.0 + (l1 - l0).exp());
        assert!((p.action_probs(1).unwrap()[0] - p0).abs() < 1e-15);
    }

    #[test]
    fn tabular_log_prob_gradient_closed_form() {
        let p = AgentPolicy::random(Architecture::TabularSoftmax, 3, 4, 1.0, &mut rng(3));
        let grad = p.grad_log_prob(1, 2).unwrap();
        let probs = p.action_probs(1).unwrap();
        for obs in 0..3 {
            for a in 0..4 {
                let expected = if obs == 1 { f64::from(a == 2) - probs[a] } else { 0.0 };
                assert!((grad[obs * 4 + a] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mlp_log_prob_gradient_matches_finite_differences() {
        let p = AgentPolicy::random(Architecture::MlpSoftmax { hidden: 18 }, 3, 5, 0.5, &mut rng(4));
        let grad = p.grad_log_prob(2, 1).unwrap();
        let h = 1e-6;
        for k in 0..p.params().len() {
            let mut q = p.clone();
            q.params_mut()[k] += h;
            let up = q.log_prob(2, 1).unwrap();
            q.params_mut()[k] -= 2.0 * h;
            let down = q.log_prob(2, 1).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-8, "param {k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let mut logits = vec![0.0; 9];
        logits[4] = 20.0;
        let p = AgentPolicy::from_params(Architecture::TabularSoftmax, 1, 9, logits).unwrap();
        let mut r = rng(9);
        let n = 100_000;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            counts[p.sample_action(0, &mut r, 1.0).unwrap()] += 1;
        }
        let q = 1.0 / 9.0;
        let sigma = (q * (1.0 - q) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - q).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn epsilon_zero_follows_peaked_softmax() {
        let mut logits = vec![0.0; 9];
        logits[4] = 20.0;
        let p = AgentPolicy::from_params(Architecture::TabularSoftmax, 1, 9, logits).unwrap();
        let mut r = rng(10);
        let n = 100_000;
        let hits = (0..n).filter(|_| p.sample_action(0, &mut r, 0.0).unwrap() == 4).count();
        assert!(hits as f64 / n as f64 > 0.999);
    }

    #[test]
    fn half_epsilon_over_uniform_softmax_is_uniform() {
        let p = AgentPolicy::zeros(Architecture::TabularSoftmax, 1, 4);
        let mut r = rng(11);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[p.sample_action(0, &mut r, 0.5).unwrap()] += 1;
        }
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn ratio_identity_and_doubling() {
        let policies: Vec<AgentPolicy> = (0..3)
            .map(|s| AgentPolicy::random(Architecture::TabularSoftmax, 1, 3, 0.5, &mut rng(s)))
            .collect();
        let snap = PolicySnapshot::take(&policies);
        let r = ratio(&policies, &snap, &[0, 0, 0], &[1, 2, 0]).unwrap();
        assert_eq!(r.0, vec![1.0, 1.0, 1.0]);

        // Agent 0: probability of action 1 goes from 1/4 to 1/2.
        let old0 = AgentPolicy::from_params(Architecture::TabularSoftmax, 1, 2, vec![0.0, 3f64.ln()]).unwrap();
        let new0 = AgentPolicy::from_params(Architecture::TabularSoftmax, 1, 2, vec![0.0, 0.0]).unwrap();
        let old = vec![old0, policies[1].clone(), policies[2].clone()];
        let mut now = old.clone();
        now[0] = new0;
        let r = ratio(&now, &PolicySnapshot::take(&old), &[0, 0, 0], &[0, 2, 0]).unwrap();
        assert!((r.0[0] - 2.0).abs() < 1e-14);
        assert_eq!(&r.0[1..], &[1.0, 1.0]);
        assert!((r.product_except(0) - 1.0).abs() < 1e-15);
        assert!((r.product() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ratio_matches_probability_quotient() {
        let old = AgentPolicy::random(Architecture::MlpSoftmax { hidden: 4 }, 2, 3, 0.5, &mut rng(20));
        let new = AgentPolicy::random(Architecture::MlpSoftmax { hidden: 4 }, 2, 3, 0.5, &mut rng(21));
        let r = ratio(std::slice::from_ref(&new), &PolicySnapshot::take(std::slice::from_ref(&old)), &[1], &[2]).unwrap();
        let oracle = new.action_probs(1).unwrap()[2] / old.action_probs(1).unwrap()[2];
        assert!((r.0[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn serialization_round_trips() {
        let p = AgentPolicy::random(Architecture::MlpSoftmax { hidden: 18 }, 2, 9, 0.05, &mut rng(5));
        assert_eq!(AgentPolicy::from_json(&p.to_json().unwrap()).unwrap(), p);
        assert_eq!(AgentPolicy::from_bytes(&p.to_bytes()).unwrap(), p);
        assert!(AgentPolicy::from_bytes(&p.to_bytes()[..30]).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_are_a_strict_simplex(seed in 0u64..1000, hidden in 1usize..20, obs in 0usize..3) {
            for arch in [Architecture::TabularSoftmax, Architecture::MlpSoftmax { hidden }] {
                let p = AgentPolicy::random(arch, 3, 9, 5.0, &mut rng(seed));
                let probs = p.action_probs(obs).unwrap();
                prop_assert!(probs.iter().all(|&x| x > 0.0));
                prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            }
        }
    }
}
