//! Evaluates random joint policies exactly on the enumerable fixtures and checks
//! the performance-difference identity and the monotonic improvement bound.
//!
//! `cargo run --release --example theory_checks`

use coppo::env::{fixture, FIXTURE_IDS};
use coppo::verifier::{bound_check, evaluate, perf_difference_check, JointPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coppo::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for id in FIXTURE_IDS {
        let mdp = fixture(id, 0)?;
        let old = JointPolicy::random(&mdp, 1.0, &mut rng);
        let new = JointPolicy::random(&mdp, 1.0, &mut rng);
        let e_old = evaluate(&mdp, &old)?;
        let e_new = evaluate(&mdp, &new)?;
        let residual = perf_difference_check(&mdp, &old, &new)?;
        let bound = bound_check(&mdp, &old, &new)?;
        println!(
            "{id:<6} states {:>2}  J(old) {:>8.4}  J(new) {:>8.4}  identity residual {residual:.1e}",
            mdp.n_states(),
            e_old.j,
            e_new.j
        );
        println!(
            "       alphas {:?}  bound {:.4}  gap {:.4}  slack {:.4}",
            bound.alphas.iter().map(|a| (a * 1e3).round() / 1e3).collect::<Vec<_>>(),
            bound.bound,
            bound.gap,
            bound.slack
        );
    }
    for report in coppo::verifier::run_all(None, Some(50), 0)? {
        println!("{:<20} {:<10} violations {}", report.check, report.fixture, report.violations);
    }
    Ok(())
}
