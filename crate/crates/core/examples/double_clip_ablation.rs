//! Compares inner clip thresholds on the penalty game: final reward and the
//! windowed policy-gradient variance.
//!
//! `cargo run --release --example double_clip_ablation`

use coppo::harness::{run_experiment, ExperimentConfig, ExperimentKind, VariantSpec};
use coppo::harness::stats::mean;
use coppo::trainer::Objective;

fn main() -> coppo::Result<()> {
    let out = std::env::temp_dir().join("coppo-ablation");
    let cfg = ExperimentConfig {
        name: "ablation".to_string(),
        kind: ExperimentKind::Ablation,
        seeds: 4,
        total_timesteps: 4000,
        variants: vec![
            VariantSpec::new("eps2-0.05", Objective::Coppo).with_eps2(0.05),
            VariantSpec::new("eps2-0.10", Objective::Coppo).with_eps2(0.10),
            VariantSpec::new("eps2-0.15", Objective::Coppo).with_eps2(0.15),
            VariantSpec::new("no-inner-clip", Objective::PerAgentNoInnerClip),
        ],
        output_dir: out.clone(),
        ..ExperimentConfig::default()
    };
    let res = run_experiment(&cfg)?;
    println!("variant          final reward  mean grad variance");
    for v in &cfg.variants {
        let vars: Vec<f64> = res
            .runs_of("penalty", &v.label)
            .flat_map(|r| r.series.grad_variance.iter().map(|&(_, x)| x))
            .collect();
        println!("{:<16} {:>12.2}  {:>18.4}", v.label, mean(&res.final_rewards("penalty", &v.label)), mean(&vars));
    }
    println!("logs in {}", out.display());
    Ok(())
}
