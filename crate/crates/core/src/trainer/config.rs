use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::policy::{Architecture, DEFAULT_HIDDEN};

/// Which per-agent surrogate an update maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Double clipping: inner clip on the other agents' ratio product, outer clip on the total.
    Coppo,
    /// Clip the full joint ratio product, weighted by the mixed joint advantage.
    JointClip,
    /// Per-agent objective with the raw other-agent product and only the outer clip.
    PerAgentNoInnerClip,
    /// Each agent clips its own ratio and ignores the others (MAPPO-style).
    IndependentRatio,
    /// Clip every agent's ratio on its own and multiply the clipped ratios.
    ClipSeparately,
    /// `log pi^i(a^i) * A`, no ratios or clipping.
    VanillaPg,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::Coppo,
        Objective::JointClip,
        Objective::PerAgentNoInnerClip,
        Objective::IndependentRatio,
        Objective::ClipSeparately,
        Objective::VanillaPg,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Coppo => "coppo",
            Objective::JointClip => "joint-clip",
            Objective::PerAgentNoInnerClip => "per-agent-no-inner-clip",
            Objective::IndependentRatio => "independent-ratio",
            Objective::ClipSeparately => "clip-separately",
            Objective::VanillaPg => "vanilla-pg",
        }
    }

    /// Whether the other agents' ratios scale this agent's advantage during an update.
    pub fn reweights_by_others(&self) -> bool {
        matches!(
            self,
            Objective::Coppo | Objective::JointClip | Objective::PerAgentNoInnerClip | Objective::ClipSeparately
        )
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| config(format!("unknown objective variant '{s}'")))
    }
}

/// Clip thresholds and epoch count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    /// Outer clip threshold.
    pub eps1: f64,
    /// Inner clip threshold on the other agents' ratio product.
    pub eps2: f64,
    /// Optimization epochs per update.
    pub epochs: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps1: 0.20,
            eps2: 0.10,
            epochs: 8,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0 && self.eps1 < 1.0) {
            return Err(config(format!("eps1 must lie in (0, 1), got {}", self.eps1)));
        }
        if !(self.eps2 > 0.0 && self.eps2 < self.eps1) {
            return Err(config(format!(
                "eps2 must satisfy 0 < eps2 < eps1 = {}, got {}",
                self.eps1, self.eps2
            )));
        }
        if self.epochs == 0 {
            return Err(config("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Linear epsilon-greedy annealing by environment timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.9,
            end: 0.02,
            anneal_steps: 6000,
        }
    }
}

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        Self {
            start: epsilon,
            end: epsilon,
            anneal_steps: 0,
        }
    }

    pub fn value(&self, timestep: usize) -> f64 {
        if self.anneal_steps == 0 || timestep >= self.anneal_steps {
            return self.end;
        }
        let frac = timestep as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }

    fn validate(&self) -> Result<()> {
        for e in [self.start, self.end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(config(format!("epsilon {e} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticChoice {
    /// Exact `Q = R` table (one-step games only).
    Exact,
    /// Learned lookup table over joint actions, regressed on Monte Carlo returns.
    LearnedQ,
    /// Learned state values with GAE advantages shared by every agent.
    LearnedV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixerChoice {
    Asum,
    Amix,
}

/// Order in which agents are optimized inside one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    /// All agents compute gradients at the epoch-start parameters, then step together.
    Simultaneous,
    /// Agent `i` steps before agent `i + 1` computes its gradient.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyArch {
    Tabular,
    Mlp { hidden: usize },
}

impl PolicyArch {
    pub fn architecture(&self) -> Architecture {
        match *self {
            PolicyArch::Tabular => Architecture::TabularSoftmax,
            PolicyArch::Mlp { hidden } => Architecture::MlpSoftmax { hidden },
        }
    }

    pub fn mlp() -> Self {
        PolicyArch::Mlp { hidden: DEFAULT_HIDDEN }
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub clip: ClipConfig,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    /// Parallel rollout workers `R`.
    pub rollout_workers: usize,
    /// Steps per worker per rollout `T`.
    pub steps_per_rollout: usize,
    pub total_timesteps: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub seed: u64,
    pub epsilon: EpsilonSchedule,
    pub policy: PolicyArch,
    /// Half-width of the uniform parameter initialization.
    pub init_scale: f64,
    pub critic: CriticChoice,
    pub critic_lr: f64,
    pub mixer: MixerChoice,
    pub standardize_advantages: bool,
    pub update_order: UpdateOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Coppo,
            clip: ClipConfig::default(),
            lr: 5e-4,
            rms_alpha: 0.99,
            rms_eps: 1e-5,
            rollout_workers: 1,
            steps_per_rollout: 1,
            total_timesteps: 10_000,
            gamma: 0.99,
            gae_lambda: 0.90,
            seed: 0,
            epsilon: EpsilonSchedule::default(),
            policy: PolicyArch::Tabular,
            init_scale: 0.05,
            critic: CriticChoice::Exact,
            critic_lr: 5e-4,
            mixer: MixerChoice::Asum,
            standardize_advantages: false,
            update_order: UpdateOrder::Simultaneous,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.clip.validate()?;
        self.epsilon.validate()?;
        if !(self.lr > 0.0) || !(self.critic_lr > 0.0) {
            return Err(config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.rms_alpha) || !(self.rms_eps >= 0.0) {
            return Err(config("RMSProp alpha must lie in [0, 1) and eps be non-negative"));
        }
        if self.rollout_workers == 0 || self.steps_per_rollout == 0 || self.total_timesteps == 0 {
            return Err(config("worker, step and timestep counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(config("gamma and gae_lambda must lie in [0, 1]"));
        }
        if !(self.init_scale > 0.0) {
            return Err(config("init_scale must be positive"));
        }
        if let PolicyArch::Mlp { hidden: 0 } = self.policy {
            return Err(config("MLP hidden width must be positive"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.rollout_workers * self.steps_per_rollout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
        let c = ClipConfig::default();
        assert_eq!((c.eps1, c.eps2, c.epochs), (0.2, 0.1, 8));
    }

    #[test]
    fn inner_threshold_must_be_below_outer() {
        let c = ClipConfig {
            eps1: 0.2,
            eps2: 0.2,
            epochs: 8,
        };
        assert!(c.validate().is_err());
        assert!(ClipConfig { epochs: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn unknown_variant_is_config_error() {
        assert!(matches!("mappo".parse::<Objective>(), Err(Error::Config(_))));
        for o in Objective::ALL {
            assert_eq!(o.as_str().parse::<Objective>().unwrap(), o);
        }
    }

    #[test]
    fn epsilon_schedule_is_linear() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 0.9);
        assert!((s.value(3000) - 0.46).abs() < 1e-12);
        assert_eq!(s.value(6000), 0.02);
        assert_eq!(s.value(9000), 0.02);
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let c: TrainConfig = toml::from_str("objective = \"independent-ratio\"\nlr = 0.001\n[clip]\neps1 = 0.3\neps2 = 0.05\nepochs = 4\n").unwrap();
        assert_eq!(c.objective, Objective::IndependentRatio);
        assert_eq!(c.clip.epochs, 4);
        assert_eq!(c.gamma, 0.99);
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
    }
}
