use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::stats::mean;
use crate::env::MatchPattern;
use crate::trainer::{Iteration, Objective, RatioStats};

/// A miscoordination penalty: every agent but one played the same action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyEvent {
    pub update_idx: usize,
    /// Global index of the sample in the run.
    pub sample_idx: usize,
    pub deviant: usize,
    pub common_action: usize,
    /// Agents that played the common action, ascending.
    pub matching: Vec<usize>,
    /// `A^j` of each matching agent.
    pub advantage: Vec<f64>,
    /// `A~^j_k` of each matching agent over the update's epochs.
    pub atilde: Vec<Vec<f64>>,
}

impl PenaltyEvent {
    /// Mean over matching agents of `mean_k A~^j_k` when `reweighted`, else of `A^j`.
    pub fn value(&self, reweighted: bool) -> f64 {
        if reweighted {
            mean(&self.atilde.iter().map(|t| mean(t)).collect::<Vec<_>>())
        } else {
            mean(&self.advantage)
        }
    }

    /// Mean over matching agents of `A~^j_k`, one entry per epoch.
    pub fn epoch_trace(&self) -> Vec<f64> {
        let k = self.atilde.first().map_or(0, |t| t.len());
        (0..k)
            .map(|e| mean(&self.atilde.iter().map(|t| t[e]).collect::<Vec<_>>()))
            .collect()
    }
}

/// Near-miss events of one iteration, in sample order.
pub fn penalty_events(it: &Iteration, first_sample_idx: usize) -> Vec<PenaltyEvent> {
    let mut out = Vec::new();
    for (b, s) in it.batch.samples.iter().enumerate() {
        if s.joint_action.len() < 3 {
            continue;
        }
        if let MatchPattern::NearMiss { common, deviant } = MatchPattern::classify(&s.joint_action) {
            let matching: Vec<usize> = (0..s.joint_action.len()).filter(|&j| j != deviant).collect();
            out.push(PenaltyEvent {
                update_idx: it.report.update_idx,
                sample_idx: first_sample_idx + b,
                deviant,
                common_action: common,
                advantage: matching.iter().map(|&j| it.bundle.per_agent[b][j]).collect(),
                atilde: matching.iter().map(|&j| it.report.sample_atilde[b][j].clone()).collect(),
                matching,
            });
        }
    }
    out
}

/// Per-event post-penalty advantage of one run, truncated to `cap` events.
pub fn post_penalty_advantage(events: &[PenaltyEvent], objective: Objective, cap: usize) -> Vec<f64> {
    events
        .iter()
        .take(cap)
        .map(|e| e.value(objective.reweights_by_others()))
        .collect()
}

/// Windowed gradient variance: for each agent, the unbiased variance of every
/// gradient component over the window, averaged over components, then over agents.
///
/// `window` holds per-update gradients indexed `[update][agent][param]`.
pub fn window_gradient_variance(window: &[Vec<Vec<f64>>]) -> f64 {
    let n = window.len();
    if n < 2 {
        return 0.0;
    }
    let n_agents = window[0].len();
    let per_agent: Vec<f64> = (0..n_agents)
        .map(|i| {
            let p = window[0][i].len();
            let comps: Vec<f64> = (0..p)
                .map(|k| {
                    // Shifted by the first value so a constant component gives exactly zero.
                    let d: Vec<f64> = window.iter().map(|g| g[i][k] - window[0][i][k]).collect();
                    let m = d.iter().sum::<f64>() / n as f64;
                    d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
                })
                .collect();
            mean(&comps)
        })
        .collect();
    mean(&per_agent)
}

/// Sliding-window gradient variance: entry `t` covers updates `t + 1 - window ..= t`,
/// starting once the first window is full.
pub fn running_grad_variance(gradients: &[Vec<Vec<f64>>], window: usize) -> Vec<f64> {
    if window < 2 || gradients.len() < window {
        return Vec::new();
    }
    (window - 1..gradients.len())
        .map(|t| window_gradient_variance(&gradients[t + 1 - window..=t]))
        .collect()
}

/// Keeps the last `window` per-update gradients of a run.
#[derive(Debug, Clone)]
pub struct GradientWindow {
    window: usize,
    buf: VecDeque<Vec<Vec<f64>>>,
}

impl GradientWindow {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            buf: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, gradient: Vec<Vec<f64>>) {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(gradient);
    }

    /// Variance over the window, once it is full.
    pub fn variance(&self) -> Option<f64> {
        if self.window < 2 || self.buf.len() < self.window {
            return None;
        }
        let v: Vec<Vec<Vec<f64>>> = self.buf.iter().cloned().collect();
        Some(window_gradient_variance(&v))
    }
}

/// One line of a run's JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub update_idx: usize,
    pub timesteps: usize,
    /// Rewards of every sample since the previous record, in order.
    pub rewards: Vec<f64>,
    /// The rest describe the update at `update_idx`, indexed `[agent][epoch]`.
    pub objective: Vec<Vec<f64>>,
    pub grad_norm: Vec<Vec<f64>>,
    pub atilde_mean: Vec<Vec<f64>>,
    pub ratio_product: Vec<RatioStats>,
    pub critic_loss: f64,
    /// Gradient variance over the trailing window of updates, once it is full.
    pub grad_variance: Option<f64>,
    /// Penalty events since the previous record.
    pub events: Vec<PenaltyEvent>,
}

/// Everything a run log contains, flattened.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSeries {
    pub rewards: Vec<f64>,
    pub events: Vec<PenaltyEvent>,
    /// `(timesteps, variance)` at each logged window.
    pub grad_variance: Vec<(usize, f64)>,
}

impl RunSeries {
    pub fn from_records(records: &[LogRecord]) -> Self {
        let mut out = RunSeries::default();
        for r in records {
            out.rewards.extend(&r.rewards);
            out.events.extend(r.events.iter().cloned());
            if let Some(v) = r.grad_variance {
                out.grad_variance.push((r.timesteps, v));
            }
        }
        out
    }

    /// Mean reward over the last `window` timesteps.
    pub fn final_reward(&self, window: usize) -> f64 {
        let start = self.rewards.len().saturating_sub(window);
        mean(&self.rewards[start..])
    }
}
