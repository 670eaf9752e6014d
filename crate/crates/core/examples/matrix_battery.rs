//! Runs CoPPO and the independent-ratio baseline on every built-in matrix game.
//!
//! `cargo run --release --example matrix_battery`

use coppo::env::list_games;
use coppo::harness::stats::mean_ci95;
use coppo::trainer::{Objective, TrainConfig, Trainer};

fn final_reward(game: &coppo::env::MatrixGameSpec, objective: Objective, seed: u64) -> coppo::Result<f64> {
    let config = TrainConfig {
        objective,
        seed,
        total_timesteps: 3000,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::matrix_game(game, config)?;
    let mut rewards = Vec::new();
    trainer.run(|it| {
        rewards.extend(it.batch.samples.iter().map(|s| s.reward));
        Ok(())
    })?;
    let tail = &rewards[rewards.len() - 500..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

fn main() -> coppo::Result<()> {
    println!("{:<20} {:>24} {:>24}", "game", "coppo", "independent-ratio");
    for game in list_games() {
        let mut cells = Vec::new();
        for objective in [Objective::Coppo, Objective::IndependentRatio] {
            let finals = (0..5).map(|s| final_reward(&game, objective, s)).collect::<coppo::Result<Vec<_>>>()?;
            let (m, lo, hi) = mean_ci95(&finals);
            cells.push(format!("{m:>7.2} [{lo:>6.1}, {hi:>6.1}]"));
        }
        println!("{:<20} {:>24} {:>24}", game.name(), cells[0], cells[1]);
    }
    Ok(())
}
