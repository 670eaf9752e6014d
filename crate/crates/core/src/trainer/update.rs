use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClipConfig, CriticChoice, MixerChoice, Objective, TrainConfig, UpdateOrder};
use super::objective::{agent_objective_and_gradient, batch_ratios, log_prob_tables};
use super::rollout::{collect, TrajectoryBatch};
use crate::advantage::{
    counterfactual_advantage, exact_q, fit_critic, gae_masked, joint_state_value, AdvantageBundle, AmixMixer,
    CriticModel, GaeConfig, Mixer, TabularCritic,
};
use crate::env::{Environment, MatrixGameEnv, MatrixGameSpec, TabularDecPomdp, TabularEnv};
use crate::error::{config, contract, Error, Result};
use crate::optim::RmsProp;
use crate::policy::{AgentPolicy, PolicySnapshot};

/// Settings of one K-epoch update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOptions {
    pub objective: Objective,
    pub clip: ClipConfig,
    pub order: UpdateOrder,
}

impl UpdateOptions {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            objective: c.objective,
            clip: c.clip,
            order: c.update_order,
        }
    }
}

/// Batch statistics of the joint ratio product `prod_j r^j` at one epoch start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// What one update did, indexed `[agent][epoch]` unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub update_idx: usize,
    pub timesteps: usize,
    pub mean_reward: f64,
    pub objective: Vec<Vec<f64>>,
    pub grad_norm: Vec<Vec<f64>>,
    /// Batch mean of `A~^i_k = (prod_{j != i} r^j_k) A^i` at the start of epoch `k`.
    pub atilde_mean: Vec<Vec<f64>>,
    pub ratio_product: Vec<RatioStats>,
    pub critic_loss: f64,
    /// Per-agent gradient averaged over the K epochs, `[agent][param]`.
    #[serde(skip)]
    pub mean_gradient: Vec<Vec<f64>>,
    /// Per-sample `A~^i_k`, `[sample][agent][epoch]`.
    #[serde(skip)]
    pub sample_atilde: Vec<Vec<Vec<f64>>>,
}

/// Runs K epochs of per-agent optimizer steps on a batch collected under
/// `snapshot`, then replaces the snapshot with the final parameters.
///
/// Advantages stay fixed for the whole update; only the ratios move. When
/// optimizing agent `i` the other agents' ratios are constants.
pub fn update(
    policies: &mut [AgentPolicy],
    optimizers: &mut [RmsProp],
    snapshot: &mut PolicySnapshot,
    batch: &TrajectoryBatch,
    bundle: &AdvantageBundle,
    opts: &UpdateOptions,
) -> Result<UpdateReport> {
    let n = policies.len();
    if optimizers.len() != n || snapshot.n_agents() != n || batch.n_agents() != n {
        return Err(contract("update inputs disagree on the number of agents"));
    }
    if bundle.len() != batch.len() || batch.is_empty() {
        return Err(contract("advantages must cover a non-empty batch"));
    }
    check_snapshot(snapshot, batch)?;
    let k_epochs = opts.clip.epochs;
    let mut report = UpdateReport {
        update_idx: 0,
        timesteps: 0,
        mean_reward: batch.mean_reward(),
        objective: vec![Vec::with_capacity(k_epochs); n],
        grad_norm: vec![Vec::with_capacity(k_epochs); n],
        atilde_mean: vec![Vec::with_capacity(k_epochs); n],
        ratio_product: Vec::with_capacity(k_epochs),
        critic_loss: 0.0,
        mean_gradient: policies.iter().map(|p| vec![0.0; p.params().len()]).collect(),
        sample_atilde: vec![vec![Vec::with_capacity(k_epochs); n]; batch.len()],
    };
    for _ in 0..k_epochs {
        let ratios = batch_ratios(policies, batch)?;
        let products: Vec<f64> = ratios.iter().map(|r| r.product()).collect();
        report.ratio_product.push(RatioStats {
            mean: crate::util::mean(&products),
            min: products.iter().copied().fold(f64::INFINITY, f64::min),
            max: products.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        for i in 0..n {
            let mut sum = 0.0;
            for (b, r) in ratios.iter().enumerate() {
                let at = bundle.modified(b, i, r);
                report.sample_atilde[b][i].push(at);
                sum += at;
            }
            report.atilde_mean[i].push(sum / batch.len() as f64);
        }

        let results: Vec<(f64, Vec<f64>)> = match opts.order {
            UpdateOrder::Simultaneous => {
                let results = policies
                    .par_iter()
                    .enumerate()
                    .map(|(i, p)| agent_objective_and_gradient(p, i, opts.objective, &opts.clip, batch, bundle, &ratios))
                    .collect::<Result<Vec<_>>>()?;
                for ((p, opt), (_, g)) in policies.iter_mut().zip(optimizers.iter_mut()).zip(&results) {
                    opt.ascend(p.params_mut(), g);
                }
                results
            }
            UpdateOrder::Sequential => {
                let mut results = Vec::with_capacity(n);
                for i in 0..n {
                    let current = if i == 0 { ratios.clone() } else { batch_ratios(policies, batch)? };
                    let (v, g) =
                        agent_objective_and_gradient(&policies[i], i, opts.objective, &opts.clip, batch, bundle, &current)?;
                    optimizers[i].ascend(policies[i].params_mut(), &g);
                    results.push((v, g));
                }
                results
            }
        };
        for (i, (v, g)) in results.into_iter().enumerate() {
            report.objective[i].push(v);
            report.grad_norm[i].push(g.iter().map(|x| x * x).sum::<f64>().sqrt());
            for (acc, x) in report.mean_gradient[i].iter_mut().zip(&g) {
                *acc += x / k_epochs as f64;
            }
        }
    }
    if let Some((i, _)) = policies
        .iter()
        .enumerate()
        .find(|(_, p)| p.params().iter().any(|x| !x.is_finite()))
    {
        return Err(Error::NonFinite(format!("agent {i} parameters became non-finite")));
    }
    *snapshot = PolicySnapshot::take(policies);
    Ok(report)
}

fn check_snapshot(snapshot: &PolicySnapshot, batch: &TrajectoryBatch) -> Result<()> {
    let tables = log_prob_tables(snapshot.policies())?;
    for s in &batch.samples {
        for (j, table) in tables.iter().enumerate() {
            if table[s.observations[j]][s.joint_action[j]] != s.old_log_probs[j] {
                return Err(contract(format!(
                    "sample (worker {}, step {}) was not collected under this snapshot",
                    s.worker, s.step
                )));
            }
        }
    }
    Ok(())
}

/// Per-agent and joint advantages of a batch under the snapshot policies.
///
/// With an action-value critic each agent gets its counterfactual advantage
/// and the mixer combines them. With a state-value critic every agent gets the
/// same GAE advantage, which is also the joint advantage.
pub fn compute_advantages(
    batch: &TrajectoryBatch,
    snapshot: &PolicySnapshot,
    critic: &CriticModel,
    mixer: &Mixer,
    gae: GaeConfig,
) -> Result<AdvantageBundle> {
    let n = snapshot.n_agents();
    let mut bundle = AdvantageBundle::default();
    if batch.is_empty() {
        return Ok(bundle);
    }
    if critic.q_row(batch.samples[0].state).is_some() {
        let probs: Vec<Vec<Vec<f64>>> = snapshot
            .policies()
            .iter()
            .map(|p| (0..p.n_observations()).map(|o| p.action_probs(o)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let space = crate::env::JointActionSpace::new(n, snapshot.agent(0).n_actions());
        for s in &batch.samples {
            let q = critic.q_row(s.state).ok_or_else(|| contract("critic lost its action values"))?;
            let adv: Vec<f64> = (0..n)
                .map(|i| counterfactual_advantage(q, space, &probs[i][s.observations[i]], s.joint_index, i))
                .collect();
            bundle.joint.push(mixer.mix(&adv, s.state));
            bundle.weights.push(mixer.weights(n, s.state));
            bundle.per_agent.push(adv);
        }
    } else {
        for seg in batch.worker_segments() {
            let samples = &batch.samples[seg];
            let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
            let terminal: Vec<bool> = samples.iter().map(|s| s.terminal).collect();
            let mut values: Vec<f64> = samples.iter().map(|s| value_of(critic, s.state)).collect::<Result<_>>()?;
            values.push(value_of(critic, samples.last().unwrap().next_state)?);
            for a in gae_masked(&rewards, &values, &terminal, gae.gamma, gae.lambda)? {
                bundle.joint.push(a);
                bundle.per_agent.push(vec![a; n]);
                bundle.weights.push(vec![1.0; n]);
            }
        }
    }
    Ok(bundle)
}

fn value_of(critic: &CriticModel, state: usize) -> Result<f64> {
    critic
        .state_value(state)
        .ok_or_else(|| contract("critic models neither action values nor state values"))
}

/// Output of one collect-then-update iteration.
#[derive(Debug, Clone)]
pub struct Iteration {
    pub batch: TrajectoryBatch,
    pub bundle: AdvantageBundle,
    pub report: UpdateReport,
}

/// Owns the environments, policies, optimizers and critic of one training run.
#[derive(Debug)]
pub struct Trainer<E> {
    config: TrainConfig,
    envs: Vec<E>,
    rngs: Vec<ChaCha8Rng>,
    policies: Vec<AgentPolicy>,
    optimizers: Vec<RmsProp>,
    snapshot: PolicySnapshot,
    critic: CriticModel,
    mixer: Mixer,
    timesteps: usize,
    updates: usize,
}

impl Trainer<MatrixGameEnv> {
    pub fn matrix_game(game: &MatrixGameSpec, config: TrainConfig) -> Result<Self> {
        let space = game.joint_space();
        let critic = match config.critic {
            CriticChoice::Exact => CriticModel::Exact(exact_q(game)),
            CriticChoice::LearnedQ => CriticModel::Learned(TabularCritic::action_value(space, 1, config.critic_lr)),
            CriticChoice::LearnedV => CriticModel::Learned(TabularCritic::state_value(space, 1, config.critic_lr)),
        };
        let envs = (0..config.rollout_workers).map(|_| MatrixGameEnv::new(game.clone())).collect();
        Self::new(config, envs, critic)
    }
}

impl Trainer<TabularEnv> {
    /// Multi-step training with a learned state-value critic and GAE.
    pub fn tabular(model: &TabularDecPomdp, config: TrainConfig) -> Result<Self> {
        if config.critic != CriticChoice::LearnedV {
            return Err(config_error("multi-step environments need critic = \"learned-v\""));
        }
        let critic = CriticModel::Learned(TabularCritic::state_value(model.joint_space(), model.n_states(), config.critic_lr));
        let envs = (0..config.rollout_workers).map(|_| TabularEnv::new(model.clone())).collect();
        Self::new(config, envs, critic)
    }
}

fn config_error(msg: &str) -> Error {
    config(msg)
}

impl<E: Environment + Send> Trainer<E> {
    /// Builds a trainer from explicit environments (one per rollout worker) and critic.
    pub fn new(config: TrainConfig, envs: Vec<E>, critic: CriticModel) -> Result<Self> {
        config.validate()?;
        if envs.len() != config.rollout_workers {
            return Err(contract("need exactly one environment per rollout worker"));
        }
        if config.mixer == MixerChoice::Amix && matches!(critic, CriticModel::Learned(ref c) if c.kind() == crate::advantage::CriticKind::StateValue) {
            return Err(config_error("the Amix mixer needs an action-value critic"));
        }
        let (n_agents, n_actions, n_obs, n_states) = {
            let e = &envs[0];
            (e.n_agents(), e.n_actions(), e.n_observations(), e.n_states())
        };
        let arch = config.policy.architecture();
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let policies: Vec<AgentPolicy> = (0..n_agents)
            .map(|_| AgentPolicy::random(arch, n_obs, n_actions, config.init_scale, &mut init))
            .collect();
        let mixer = match config.mixer {
            MixerChoice::Asum => Mixer::Asum,
            MixerChoice::Amix => Mixer::Amix(AmixMixer::random(n_agents, n_states, 1.0, &mut init)),
        };
        let rngs = (0..envs.len())
            .map(|w| {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed);
                r.set_stream(w as u64 + 1);
                r
            })
            .collect();
        let optimizers = policies
            .iter()
            .map(|p| RmsProp::new(p.params().len(), config.lr, config.rms_alpha, config.rms_eps))
            .collect();
        Ok(Self {
            snapshot: PolicySnapshot::take(&policies),
            config,
            envs,
            rngs,
            policies,
            optimizers,
            critic,
            mixer,
            timesteps: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policies(&self) -> &[AgentPolicy] {
        &self.policies
    }

    pub fn snapshot(&self) -> &PolicySnapshot {
        &self.snapshot
    }

    pub fn critic(&self) -> &CriticModel {
        &self.critic
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn is_done(&self) -> bool {
        self.timesteps >= self.config.total_timesteps
    }

    /// Collects one batch, computes advantages, updates the critic and mixer,
    /// and runs the K-epoch policy update.
    pub fn step(&mut self) -> Result<Iteration> {
        let t0 = self.timesteps;
        let workers = self.config.rollout_workers;
        let schedule = self.config.epsilon;
        let batch = collect(&mut self.envs, &mut self.rngs, &self.snapshot, self.config.steps_per_rollout, |t| {
            schedule.value(t0 + t * workers)
        })?;
        let gae = GaeConfig::new(self.config.gamma, self.config.gae_lambda)?;

        if let Mixer::Amix(m) = &mut self.mixer {
            let plain = compute_advantages(&batch, &self.snapshot, &self.critic, &Mixer::Asum, gae)?;
            let targets = joint_advantage_targets(&batch, &self.snapshot, &self.critic)?;
            let states: Vec<usize> = batch.samples.iter().map(|s| s.state).collect();
            m.fit_step(&plain.per_agent, &states, &targets, self.config.critic_lr);
        }
        let mut bundle = compute_advantages(&batch, &self.snapshot, &self.critic, &self.mixer, gae)?;
        if self.config.standardize_advantages {
            bundle.standardize();
        }
        let critic_loss = self.fit_critic(&batch, &bundle)?;

        let opts = UpdateOptions::from_config(&self.config);
        let mut report = update(
            &mut self.policies,
            &mut self.optimizers,
            &mut self.snapshot,
            &batch,
            &bundle,
            &opts,
        )?;
        self.timesteps += batch.len();
        report.update_idx = self.updates;
        report.timesteps = self.timesteps;
        report.critic_loss = critic_loss;
        self.updates += 1;
        Ok(Iteration { batch, bundle, report })
    }

    fn fit_critic(&mut self, batch: &TrajectoryBatch, bundle: &AdvantageBundle) -> Result<f64> {
        let states: Vec<usize> = batch.samples.iter().map(|s| s.state).collect();
        let joints: Vec<usize> = batch.samples.iter().map(|s| s.joint_index).collect();
        let targets: Vec<f64> = match &self.critic {
            CriticModel::Learned(c) if c.kind() == crate::advantage::CriticKind::StateValue => {
                // Lambda returns.
                bundle.joint.iter().zip(&states).map(|(a, &s)| a + c.predict(s, 0)).collect()
            }
            _ => {
                if batch.samples.iter().any(|s| !s.terminal) {
                    return Err(config_error("action-value critics need one-step episodes"));
                }
                batch.samples.iter().map(|s| s.reward).collect()
            }
        };
        fit_critic(&mut self.critic, &states, &joints, &targets)
    }

    /// Trains until the timestep budget is spent, handing every iteration to `observe`.
    pub fn run<F>(&mut self, mut observe: F) -> Result<()>
    where
        F: FnMut(&Iteration) -> Result<()>,
    {
        while !self.is_done() {
            let it = self.step()?;
            observe(&it)?;
        }
        Ok(())
    }
}

/// `Q(s, a) - V(s)` under the snapshot, the target the Amix mixer regresses on.
fn joint_advantage_targets(batch: &TrajectoryBatch, snapshot: &PolicySnapshot, critic: &CriticModel) -> Result<Vec<f64>> {
    let n = snapshot.n_agents();
    let space = crate::env::JointActionSpace::new(n, snapshot.agent(0).n_actions());
    batch
        .samples
        .iter()
        .map(|s| {
            let q = critic.q_row(s.state).ok_or_else(|| contract("joint advantage needs action values"))?;
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|i| snapshot.agent(i).action_probs(s.observations[i]))
                .collect::<Result<_>>()?;
            Ok(q[s.joint_index] - joint_state_value(q, space, &probs))
        })
        .collect()
}
