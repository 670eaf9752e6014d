//! Trains CoPPO with a learned state-value critic and GAE on a multi-step
//! enumerable Dec-POMDP, tracking the exact performance of the learned policies.
//!
//! `cargo run --release --example multi_step_gae`

use coppo::env::fixture;
use coppo::trainer::{CriticChoice, EpsilonSchedule, TrainConfig, Trainer};
use coppo::verifier::{exact_performance, JointPolicy};

fn main() -> coppo::Result<()> {
    let mdp = fixture("triad", 1)?;
    let config = TrainConfig {
        critic: CriticChoice::LearnedV,
        critic_lr: 5e-2,
        lr: 1e-2,
        rollout_workers: 4,
        steps_per_rollout: 16,
        total_timesteps: 20_000,
        epsilon: EpsilonSchedule::constant(0.05),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::tabular(&mdp, config)?;
    let start = exact_performance(&mdp, &JointPolicy::from_policies(trainer.policies())?)?;
    println!("exact J at start {start:.4}");
    let mut k = 0;
    trainer.run(|it| {
        k += 1;
        if k % 50 == 0 {
            println!(
                "update {:>4}  batch reward {:>7.3}  critic loss {:>8.4}",
                it.report.update_idx, it.report.mean_reward, it.report.critic_loss
            );
        }
        Ok(())
    })?;
    let end = exact_performance(&mdp, &JointPolicy::from_policies(trainer.policies())?)?;
    println!("exact J at end   {end:.4}");
    Ok(())
}
