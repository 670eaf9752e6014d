use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::game_by_id;
use crate::error::{config, Result};
use crate::trainer::{Objective, TrainConfig};

/// Which figure panels an experiment feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Reward, post-penalty advantage, within-update advantage and gradient variance.
    Comparison,
    /// Reward and gradient variance across inner clip thresholds.
    Ablation,
    /// Reward per game.
    Battery,
}

/// One objective variant to train, optionally overriding the clip settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub label: String,
    pub objective: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

impl VariantSpec {
    pub fn new(label: &str, objective: Objective) -> Self {
        Self {
            label: label.to_string(),
            objective: objective.as_str().to_string(),
            eps2: None,
            epochs: None,
        }
    }

    pub fn with_eps2(mut self, eps2: f64) -> Self {
        self.eps2 = Some(eps2);
        self
    }

    pub fn objective(&self) -> Result<Objective> {
        self.objective.parse()
    }

    /// The training configuration of this variant for one seed.
    ///
    /// Vanilla policy gradient takes a single epoch unless `epochs` says otherwise,
    /// since repeated epochs on the same batch need an importance ratio.
    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> Result<TrainConfig> {
        let mut c = base.clone();
        c.objective = self.objective()?;
        c.seed = seed;
        if let Some(e) = self.eps2 {
            c.clip.eps2 = e;
        }
        c.clip.epochs = match (self.epochs, c.objective) {
            (Some(k), _) => k,
            (None, Objective::VanillaPg) => 1,
            (None, _) => c.clip.epochs,
        };
        c.validate()?;
        Ok(c)
    }
}

/// A seeded sweep over games and objective variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub games: Vec<String>,
    pub variants: Vec<VariantSpec>,
    pub seeds: usize,
    /// First seed; runs use `seed_offset..seed_offset + seeds`.
    pub seed_offset: u64,
    pub total_timesteps: usize,
    /// Parallel jobs (game, variant, seed).
    pub workers: usize,
    /// Trailing reward smoothing window in timesteps.
    pub reward_window: usize,
    /// Gradient-variance window in updates.
    pub grad_variance_window: usize,
    /// Trailing window for the final mean reward, in timesteps.
    pub final_window: usize,
    /// Cap on post-penalty events per run; `None` uses the smallest count over all runs.
    pub penalty_cap: Option<usize>,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".to_string(),
            kind: ExperimentKind::Comparison,
            games: vec!["penalty".to_string()],
            variants: vec![
                VariantSpec::new("coppo", Objective::Coppo),
                VariantSpec::new("independent-ratio", Objective::IndependentRatio),
            ],
            seeds: 20,
            seed_offset: 0,
            total_timesteps: 10_000,
            workers: 1,
            reward_window: 100,
            grad_variance_window: 50,
            final_window: 1000,
            penalty_cap: None,
            output_dir: PathBuf::from("results"),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| config(format!("invalid experiment config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(format!("cannot serialize config: {e}")))
    }

    /// Checks games, variants and counts before any run starts.
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(config("seeds must be at least 1"));
        }
        if self.total_timesteps == 0 {
            return Err(config("total_timesteps must be positive"));
        }
        if self.workers == 0 {
            return Err(config("workers must be at least 1"));
        }
        if self.games.is_empty() || self.variants.is_empty() {
            return Err(config("need at least one game and one variant"));
        }
        if self.reward_window == 0 || self.final_window == 0 || self.grad_variance_window < 2 {
            return Err(config("reward/final windows must be positive and the gradient window at least 2"));
        }
        for g in &self.games {
            game_by_id(g)?;
        }
        let mut labels: Vec<&str> = self.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(config("variant labels must be unique"));
        }
        if labels.iter().any(|l| l.is_empty() || l.contains(['/', '\\'])) {
            return Err(config("variant labels must be non-empty path-safe names"));
        }
        for v in &self.variants {
            v.train_config(&self.resolved_train(), self.seed_offset)?;
        }
        Ok(())
    }

    /// Training defaults with the experiment's timestep budget applied.
    pub fn resolved_train(&self) -> TrainConfig {
        TrainConfig {
            total_timesteps: self.total_timesteps,
            ..self.train.clone()
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|s| s + self.seed_offset).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn minimal_toml() {
        let c = ExperimentConfig::from_toml(
            r#"
            name = "t"
            games = ["penalty"]
            seeds = 2
            total_timesteps = 100
            [[variants]]
            label = "coppo-0.05"
            objective = "coppo"
            eps2 = 0.05
            "#,
        )
        .unwrap();
        assert_eq!(c.variants.len(), 1);
        assert_eq!(c.reward_window, 100);
        let t = c.variants[0].train_config(&c.resolved_train(), 4).unwrap();
        assert_eq!((t.clip.eps2, t.seed, t.total_timesteps), (0.05, 4, 100));
    }

    #[test]
    fn bad_game_or_variant_is_config_error() {
        let bad_game = "games = [\"nope\"]";
        assert!(matches!(ExperimentConfig::from_toml(bad_game), Err(Error::Config(_))));
        let bad_variant = "[[variants]]\nlabel = \"x\"\nobjective = \"mappo\"";
        assert!(matches!(ExperimentConfig::from_toml(bad_variant), Err(Error::Config(_))));
        let bad_eps = "[[variants]]\nlabel = \"x\"\nobjective = \"coppo\"\neps2 = 0.5";
        assert!(matches!(ExperimentConfig::from_toml(bad_eps), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("seeds = 0"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("unknown_key = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn vanilla_defaults_to_one_epoch() {
        let v = VariantSpec::new("pg", Objective::VanillaPg);
        assert_eq!(v.train_config(&TrainConfig::default(), 0).unwrap().clip.epochs, 1);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
