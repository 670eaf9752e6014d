use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{contract, Result};
use crate::policy::PolicySnapshot;

/// One transition with the snapshot log-probabilities of the actions taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub worker: usize,
    pub step: usize,
    pub state: usize,
    pub observations: Vec<usize>,
    pub joint_action: Vec<usize>,
    /// Row-major index of `joint_action`.
    pub joint_index: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
    /// `log pi_old^j(a^j | o^j)` per agent, from the pure softmax.
    pub old_log_probs: Vec<f64>,
    /// Exploration rate in force when the action was drawn.
    pub epsilon: f64,
}

/// Samples ordered by `(worker, step)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub samples: Vec<Sample>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.samples.first().map_or(0, |s| s.joint_action.len())
    }

    pub fn mean_reward(&self) -> f64 {
        crate::util::mean(&self.samples.iter().map(|s| s.reward).collect::<Vec<_>>())
    }

    /// Contiguous index ranges of each worker's samples.
    pub fn worker_segments(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for k in 1..=self.samples.len() {
            if k == self.samples.len() || self.samples[k].worker != self.samples[start].worker {
                out.push(start..k);
                start = k;
            }
        }
        out
    }
}

/// Runs every worker's environment for `steps` steps under `snapshot`.
///
/// `epsilon(t)` gives the exploration rate for step `t` of this rollout.
/// Environments without an episode in progress are reset first. Workers run
/// in parallel and are merged by worker index, so the result depends only on
/// the environments' and generators' states.
pub fn collect<E, R, F>(
    envs: &mut [E],
    rngs: &mut [R],
    snapshot: &PolicySnapshot,
    steps: usize,
    epsilon: F,
) -> Result<TrajectoryBatch>
where
    E: Environment + Send,
    R: RngCore + Send,
    F: Fn(usize) -> f64 + Sync,
{
    if envs.len() != rngs.len() || envs.is_empty() {
        return Err(contract("collect needs one generator per environment and at least one worker"));
    }
    if let Some(env) = envs.iter().find(|e| e.n_agents() != snapshot.n_agents()) {
        return Err(contract(format!(
            "environment has {} agents but the snapshot has {}",
            env.n_agents(),
            snapshot.n_agents()
        )));
    }
    let per_worker: Vec<Vec<Sample>> = envs
        .par_iter_mut()
        .zip(rngs.par_iter_mut())
        .enumerate()
        .map(|(worker, (env, rng))| run_worker(worker, env, rng, snapshot, steps, &epsilon))
        .collect::<Result<_>>()?;
    Ok(TrajectoryBatch {
        samples: per_worker.into_iter().flatten().collect(),
    })
}

fn run_worker<E: Environment, R: RngCore>(
    worker: usize,
    env: &mut E,
    rng: &mut R,
    snapshot: &PolicySnapshot,
    steps: usize,
    epsilon: &dyn Fn(usize) -> f64,
) -> Result<Vec<Sample>> {
    let space = env.joint_space();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let observations = match env.observations() {
            Some(obs) => obs,
            None => env.reset(rng),
        };
        let eps = epsilon(step);
        let mut joint_action = Vec::with_capacity(observations.len());
        for (policy, &o) in snapshot.policies().iter().zip(&observations) {
            joint_action.push(policy.sample_action(o, rng, eps)?);
        }
        let old_log_probs = snapshot
            .policies()
            .iter()
            .zip(&observations)
            .zip(&joint_action)
            .map(|((p, &o), &a)| p.log_prob(o, a))
            .collect::<Result<Vec<_>>>()?;
        let t = env.step(&joint_action, rng)?;
        out.push(Sample {
            worker,
            step,
            state: t.state,
            joint_index: space.encode(&joint_action),
            observations,
            joint_action,
            reward: t.reward,
            next_state: t.next_state,
            terminal: t.terminal,
            old_log_probs,
            epsilon: eps,
        });
    }
    Ok(out)
}
