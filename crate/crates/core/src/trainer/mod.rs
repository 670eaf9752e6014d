//! Clipped multi-agent objectives, rollout collection and the K-epoch update loop.

mod config;
mod objective;
mod rollout;
mod update;

pub use config::{
    ClipConfig, CriticChoice, EpsilonSchedule, MixerChoice, Objective, PolicyArch, TrainConfig, UpdateOrder,
};
pub use objective::{
    agent_objective_and_gradient, batch_ratios, clipped_term, coppo_objective, inner_clip_weight, sample_term,
    variant_objective, SampleTerms,
};
pub use rollout::{collect, Sample, TrajectoryBatch};
pub use update::{compute_advantages, update, Iteration, RatioStats, Trainer, UpdateOptions, UpdateReport};
