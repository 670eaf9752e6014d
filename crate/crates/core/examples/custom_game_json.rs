//! Defines a two-agent coordination game in JSON and trains every objective variant on it.
//!
//! `cargo run --release --example custom_game_json`

use coppo::env::MatrixGameSpec;
use coppo::trainer::{Objective, TrainConfig, Trainer};

const GAME: &str = r#"{
    "n_agents": 2,
    "n_actions": 3,
    "rewards": [11, -30, 0,
                -30, 7, 6,
                0, 0, 5]
}"#;

fn main() -> coppo::Result<()> {
    let game = MatrixGameSpec::from_json(GAME)?;
    println!("{} agents, {} actions, round trip: {}", game.n_agents(), game.n_actions(), game.to_json()?);
    for objective in Objective::ALL {
        let config = TrainConfig {
            objective,
            total_timesteps: 2000,
            lr: 1e-2,
            epsilon: coppo::trainer::EpsilonSchedule { start: 0.9, end: 0.02, anneal_steps: 1000 },
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::matrix_game(&game, config)?;
        trainer.run(|_| Ok(()))?;
        let greedy: Vec<usize> = trainer
            .policies()
            .iter()
            .map(|p| {
                let probs = p.action_probs(0)?;
                Ok((0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap())
            })
            .collect::<coppo::Result<_>>()?;
        println!("{:<24} greedy joint action {:?} -> reward {}", objective.as_str(), greedy, game.reward(&greedy)?);
    }
    Ok(())
}
