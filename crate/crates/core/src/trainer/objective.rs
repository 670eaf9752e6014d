use crate::advantage::AdvantageBundle;
use crate::error::{contract, Result};
use crate::policy::autodiff::{self, Tape, Var};
use crate::policy::{AgentPolicy, RatioVector};

use super::config::{ClipConfig, Objective};
use super::rollout::TrajectoryBatch;

fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// `g = clip(prod_{j != i} r^j, 1 - eps2, 1 + eps2)`; the empty product is 1.
pub fn inner_clip_weight(ratios: &RatioVector, agent: usize, eps2: f64) -> f64 {
    clip(ratios.product_except(agent), 1.0 - eps2, 1.0 + eps2)
}

/// Per-sample clipped term `min(u A, clip(u, 1 - eps, 1 + eps) A)`.
pub fn clipped_term(u: f64, advantage: f64, eps: f64) -> f64 {
    (u * advantage).min(clip(u, 1.0 - eps, 1.0 + eps) * advantage)
}

/// Per-sample inputs agent `agent`'s objective needs, besides its own log-probability.
#[derive(Debug, Clone, Copy)]
pub struct SampleTerms {
    /// `log pi_old^i(a^i | o^i)`.
    pub old_log_prob: f64,
    /// `c^i A^i`.
    pub agent_advantage: f64,
    /// Mixed joint advantage.
    pub joint_advantage: f64,
    /// Product of the other agents' current ratios (held constant).
    pub others_product: f64,
    /// Product of the other agents' individually clipped ratios (outer threshold).
    pub others_clipped_product: f64,
}

impl SampleTerms {
    pub fn new(
        ratios: &RatioVector,
        agent: usize,
        old_log_prob: f64,
        agent_advantage: f64,
        joint_advantage: f64,
        eps1: f64,
    ) -> Self {
        let others_clipped_product = ratios
            .0
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .map(|(_, &r)| clip(r, 1.0 - eps1, 1.0 + eps1))
            .product();
        Self {
            old_log_prob,
            agent_advantage,
            joint_advantage,
            others_product: ratios.product_except(agent),
            others_clipped_product,
        }
    }
}

/// Builds one sample's objective term on `tape` from the agent's own log-probability node.
pub fn sample_term(tape: &mut Tape, log_prob: Var, terms: &SampleTerms, variant: Objective, clip: &ClipConfig) -> Var {
    let (lo, hi) = (1.0 - clip.eps1, 1.0 + clip.eps1);
    if variant == Objective::VanillaPg {
        return tape.scale(log_prob, terms.joint_advantage);
    }
    let shifted = tape.add_const(log_prob, -terms.old_log_prob);
    let r = tape.exp(shifted);
    let outer = |tape: &mut Tape, u: Var, a: f64| {
        let unclipped = tape.scale(u, a);
        let clipped = tape.clip(u, lo, hi);
        let clipped = tape.scale(clipped, a);
        tape.min(unclipped, clipped)
    };
    match variant {
        Objective::Coppo => {
            let g = clip_value(terms.others_product, 1.0 - clip.eps2, 1.0 + clip.eps2);
            let u = tape.scale(r, g);
            outer(tape, u, terms.agent_advantage)
        }
        Objective::PerAgentNoInnerClip => {
            let u = tape.scale(r, terms.others_product);
            outer(tape, u, terms.agent_advantage)
        }
        Objective::JointClip => {
            let u = tape.scale(r, terms.others_product);
            outer(tape, u, terms.joint_advantage)
        }
        Objective::IndependentRatio => outer(tape, r, terms.agent_advantage),
        Objective::ClipSeparately => {
            let a = terms.agent_advantage;
            let unclipped = tape.scale(r, terms.others_product * a);
            let clipped = tape.clip(r, lo, hi);
            let clipped = tape.scale(clipped, terms.others_clipped_product * a);
            tape.min(unclipped, clipped)
        }
        Objective::VanillaPg => unreachable!(),
    }
}

fn clip_value(x: f64, lo: f64, hi: f64) -> f64 {
    clip(x, lo, hi)
}

/// Current ratios `exp(log pi^j - log pi_old^j)` of every sample.
pub fn batch_ratios(policies: &[AgentPolicy], batch: &TrajectoryBatch) -> Result<Vec<RatioVector>> {
    let n = policies.len();
    let tables = log_prob_tables(policies)?;
    batch
        .samples
        .iter()
        .map(|s| {
            if s.joint_action.len() != n {
                return Err(contract("batch and policies disagree on the number of agents"));
            }
            Ok(RatioVector(
                (0..n)
                    .map(|j| (tables[j][s.observations[j]][s.joint_action[j]] - s.old_log_probs[j]).exp())
                    .collect(),
            ))
        })
        .collect()
}

/// `log pi^j(. | o)` for every agent and observation.
pub(crate) fn log_prob_tables(policies: &[AgentPolicy]) -> Result<Vec<Vec<Vec<f64>>>> {
    policies
        .iter()
        .map(|p| (0..p.n_observations()).map(|o| p.log_probs(o)).collect())
        .collect()
}

fn check_shapes(batch: &TrajectoryBatch, bundle: &AdvantageBundle, ratios: &[RatioVector], agent: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(contract("objective needs a non-empty batch"));
    }
    if bundle.len() != batch.len() || ratios.len() != batch.len() {
        return Err(contract("batch, advantages and ratios have different lengths"));
    }
    if agent >= batch.n_agents() {
        return Err(contract(format!("agent {agent} out of range")));
    }
    Ok(())
}

/// Agent `agent`'s batch-mean objective and its gradient with respect to that
/// agent's parameters, with the other agents' ratios taken from `ratios`.
pub fn agent_objective_and_gradient(
    policy: &AgentPolicy,
    agent: usize,
    variant: Objective,
    clip: &ClipConfig,
    batch: &TrajectoryBatch,
    bundle: &AdvantageBundle,
    ratios: &[RatioVector],
) -> Result<(f64, Vec<f64>)> {
    check_shapes(batch, bundle, ratios, agent)?;
    autodiff::value_and_gradient(policy.params(), |tape, leaves| {
        build_objective(tape, leaves, policy, agent, variant, clip, batch, bundle, ratios)
    })
}

#[allow(clippy::too_many_arguments)]
fn build_objective(
    tape: &mut Tape,
    leaves: &[Var],
    policy: &AgentPolicy,
    agent: usize,
    variant: Objective,
    clip: &ClipConfig,
    batch: &TrajectoryBatch,
    bundle: &AdvantageBundle,
    ratios: &[RatioVector],
) -> Var {
    let mut cache: Vec<Option<Vec<Var>>> = vec![None; policy.n_observations()];
    let mut terms = Vec::with_capacity(batch.len());
    for (b, s) in batch.samples.iter().enumerate() {
        let o = s.observations[agent];
        if cache[o].is_none() {
            cache[o] = Some(policy.log_probs_on(tape, leaves, o));
        }
        let lp = cache[o].as_ref().unwrap()[s.joint_action[agent]];
        let st = SampleTerms::new(
            &ratios[b],
            agent,
            s.old_log_probs[agent],
            bundle.weights[b][agent] * bundle.per_agent[b][agent],
            bundle.joint[b],
            clip.eps1,
        );
        terms.push(sample_term(tape, lp, &st, variant, clip));
    }
    let total = tape.sum(&terms);
    tape.scale(total, 1.0 / batch.len() as f64)
}

/// Value of `variant`'s objective for `agent` under the current policies.
pub fn variant_objective(
    variant: Objective,
    batch: &TrajectoryBatch,
    policies: &[AgentPolicy],
    bundle: &AdvantageBundle,
    clip: &ClipConfig,
    agent: usize,
) -> Result<f64> {
    let ratios = batch_ratios(policies, batch)?;
    check_shapes(batch, bundle, &ratios, agent)?;
    Ok(autodiff::evaluate(policies[agent].params(), |tape, leaves| {
        build_objective(tape, leaves, &policies[agent], agent, variant, clip, batch, bundle, &ratios)
    }))
}

/// The double-clipped objective of `agent`.
pub fn coppo_objective(
    batch: &TrajectoryBatch,
    policies: &[AgentPolicy],
    bundle: &AdvantageBundle,
    clip: &ClipConfig,
    agent: usize,
) -> Result<f64> {
    variant_objective(Objective::Coppo, batch, policies, bundle, clip, agent)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn terms(others: f64, a: f64) -> SampleTerms {
        SampleTerms {
            old_log_prob: 0.0,
            agent_advantage: a,
            joint_advantage: a,
            others_product: others,
            others_clipped_product: others,
        }
    }

    fn eval(r: f64, t: &SampleTerms, v: Objective, c: &ClipConfig) -> f64 {
        let mut tape = Tape::new();
        let lp = tape.leaf(r.ln());
        let out = sample_term(&mut tape, lp, t, v, c);
        tape.value(out)
    }

    #[test]
    fn inner_clip_examples() {
        assert_eq!(inner_clip_weight(&RatioVector(vec![1.0; 4]), 2, 0.1), 1.0);
        let w = inner_clip_weight(&RatioVector(vec![0.3, 1.25]), 0, 0.10);
        assert!((w - 1.10).abs() < 1e-15);
        let w = inner_clip_weight(&RatioVector(vec![0.8, 7.0]), 1, 0.15);
        assert!((w - 0.85).abs() < 1e-15);
        assert_eq!(inner_clip_weight(&RatioVector(vec![3.0]), 0, 0.1), 1.0);
    }

    #[test]
    fn outer_clip_examples() {
        let c = ClipConfig::default();
        // g = 1, r = 1.5
        assert!((eval(1.5, &terms(1.0, 1.0), Objective::Coppo, &c) - 1.2).abs() < 1e-12);
        assert!((eval(1.5, &terms(1.0, -1.0), Objective::Coppo, &c) + 1.5).abs() < 1e-12);
        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_term(1.5, -1.0, 0.2) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn clip_separately_matches_no_inner_clip_inside_band() {
        let c = ClipConfig::default();
        let t = terms(1.05 * 0.97, 0.7);
        let a = eval(1.1, &t, Objective::ClipSeparately, &c);
        let b = eval(1.1, &t, Objective::PerAgentNoInnerClip, &c);
        assert!((a - b).abs() < 1e-14);
    }

    fn arb_clip() -> impl Strategy<Value = ClipConfig> {
        (0.05f64..0.5, 0.1f64..0.95).prop_map(|(e1, f)| ClipConfig {
            eps1: e1,
            eps2: e1 * f,
            epochs: 1,
        })
    }

    proptest! {
        #[test]
        fn coppo_is_pessimistic_and_in_band(r in 0.01f64..5.0, others in 0.01f64..5.0, a in -10.0f64..10.0, c in arb_clip()) {
            let t = terms(others, a);
            let v = eval(r, &t, Objective::Coppo, &c);
            let g = clip(others, 1.0 - c.eps2, 1.0 + c.eps2);
            prop_assert!(g >= 1.0 - c.eps2 && g <= 1.0 + c.eps2);
            prop_assert!(v <= g * r * a + 1e-12 * (1.0 + (g * r * a).abs()));
            // Before the outer clip the term is bounded by the inner band.
            prop_assert!((g * r * a).abs() <= (1.0 + c.eps2) * r * a.abs() * (1.0 + 1e-15));
            prop_assert!((v - clipped_term(g * r, a, c.eps1)).abs() <= 1e-12 * (1.0 + v.abs()));
        }

        #[test]
        fn step_headroom_contains_one(c in arb_clip()) {
            // With g at either clip boundary, r can still move inside a band that contains 1.
            let lo = (1.0 - c.eps1) / (1.0 - c.eps2);
            let hi = (1.0 + c.eps1) / (1.0 + c.eps2);
            prop_assert!(lo < 1.0 && 1.0 < hi);
        }

        #[test]
        fn single_agent_coppo_equals_ppo(r in 0.01f64..5.0, a in -10.0f64..10.0, c in arb_clip()) {
            let t = SampleTerms::new(&RatioVector(vec![r]), 0, 0.0, a, a, c.eps1);
            prop_assert_eq!(t.others_product, 1.0);
            let v = eval(r, &t, Objective::Coppo, &c);
            let w = eval(r, &t, Objective::IndependentRatio, &c);
            prop_assert_eq!(v.to_bits(), w.to_bits());
        }
    }
}
