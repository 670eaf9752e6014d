//! Trains CoPPO on the four-agent penalty game and prints the reward curve and
//! the matching agents' advantages after each miscoordination penalty.
//!
//! `cargo run --release --example penalty_game`

use coppo::env::penalty_game;
use coppo::harness::{penalty_events, PenaltyEvent};
use coppo::trainer::{Objective, TrainConfig, Trainer};

fn main() -> coppo::Result<()> {
    let config = TrainConfig {
        objective: Objective::Coppo,
        total_timesteps: 10_000,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::matrix_game(&penalty_game(4, 9), config)?;
    let mut rewards = Vec::new();
    let mut events: Vec<PenaltyEvent> = Vec::new();
    trainer.run(|it| {
        events.extend(penalty_events(it, rewards.len()));
        rewards.extend(it.batch.samples.iter().map(|s| s.reward));
        Ok(())
    })?;

    println!("timesteps  mean reward (last 1000)");
    for end in (1000..=rewards.len()).step_by(1000) {
        let window = &rewards[end - 1000..end];
        println!("{end:>9}  {:>8.2}", window.iter().sum::<f64>() / window.len() as f64);
    }
    println!("\n{} penalties; first five, mean A~ of matching agents by epoch:", events.len());
    for e in events.iter().take(5) {
        let trace: Vec<String> = e.epoch_trace().iter().map(|x| format!("{x:.3}")).collect();
        println!("  t={:<5} deviant {} [{}]", e.sample_idx, e.deviant, trace.join(", "));
    }
    Ok(())
}
