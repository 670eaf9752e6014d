use serde::{Deserialize, Serialize};

use super::QTable;
use crate::env::JointActionSpace;
use crate::error::{contract, Result};
use crate::optim::RmsProp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    /// `Q(s, a)` over joint actions.
    ActionValue,
    /// `V(s)`.
    StateValue,
}

/// Learned lookup-table critic trained by RMSProp on squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCritic {
    kind: CriticKind,
    space: JointActionSpace,
    n_states: usize,
    values: Vec<f64>,
    optimizer: RmsProp,
}

impl TabularCritic {
    pub fn action_value(space: JointActionSpace, n_states: usize, lr: f64) -> Self {
        let n = n_states * space.size();
        Self {
            kind: CriticKind::ActionValue,
            space,
            n_states,
            values: vec![0.0; n],
            optimizer: RmsProp::new(n, lr, RmsProp::DEFAULT_ALPHA, RmsProp::DEFAULT_EPS),
        }
    }

    pub fn state_value(space: JointActionSpace, n_states: usize, lr: f64) -> Self {
        Self {
            kind: CriticKind::StateValue,
            space,
            n_states,
            values: vec![0.0; n_states],
            optimizer: RmsProp::new(n_states, lr, RmsProp::DEFAULT_ALPHA, RmsProp::DEFAULT_EPS),
        }
    }

    pub fn kind(&self) -> CriticKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index(&self, state: usize, joint_index: usize) -> usize {
        match self.kind {
            CriticKind::ActionValue => state * self.space.size() + joint_index,
            CriticKind::StateValue => state,
        }
    }

    pub fn predict(&self, state: usize, joint_index: usize) -> f64 {
        self.values[self.index(state, joint_index)]
    }
}

/// A critic: the exact action-value table of a one-step game, or a learned table.
#[derive(Debug, Clone, PartialEq)]
pub enum CriticModel {
    Exact(QTable),
    Learned(TabularCritic),
}

impl CriticModel {
    /// `Q(s, .)` over joint actions, when this critic models action values.
    pub fn q_row(&self, state: usize) -> Option<&[f64]> {
        match self {
            CriticModel::Exact(q) => Some(q.row(state)),
            CriticModel::Learned(c) if c.kind == CriticKind::ActionValue => {
                let n = c.space.size();
                Some(&c.values[state * n..(state + 1) * n])
            }
            CriticModel::Learned(_) => None,
        }
    }

    pub fn state_value(&self, state: usize) -> Option<f64> {
        match self {
            CriticModel::Learned(c) if c.kind == CriticKind::StateValue => Some(c.values[state]),
            _ => None,
        }
    }

    pub fn predict(&self, state: usize, joint_index: usize) -> f64 {
        match self {
            CriticModel::Exact(q) => q.get(state, joint_index),
            CriticModel::Learned(c) => c.predict(state, joint_index),
        }
    }
}

/// One optimizer step of the critic towards `targets` (Monte Carlo or lambda returns).
///
/// Returns the mean squared error before the step. The exact critic is never
/// updated; its loss is reported as-is.
pub fn fit_critic(critic: &mut CriticModel, states: &[usize], joint_indices: &[usize], targets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(contract("fit_critic needs a non-empty batch"));
    }
    if states.len() != targets.len() || joint_indices.len() != targets.len() {
        return Err(contract("fit_critic inputs have different lengths"));
    }
    let n = targets.len() as f64;
    let loss = states
        .iter()
        .zip(joint_indices)
        .zip(targets)
        .map(|((&s, &a), &y)| {
            let e = critic.predict(s, a) - y;
            e * e
        })
        .sum::<f64>()
        / n;
    if let CriticModel::Learned(c) = critic {
        let mut grad = vec![0.0; c.values.len()];
        for ((&s, &a), &y) in states.iter().zip(joint_indices).zip(targets) {
            let k = c.index(s, a);
            grad[k] += 2.0 * (c.values[k] - y) / n;
        }
        let TabularCritic { values, optimizer, .. } = c;
        optimizer.descend(values, &grad);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::exact_q;
    use crate::env::penalty_game;

    #[test]
    fn exact_critic_has_zero_loss_on_rewards() {
        let g = penalty_game(4, 9);
        let mut c = CriticModel::Exact(exact_q(&g));
        let joints = [0usize, 17, 6560, 100];
        let targets: Vec<f64> = joints.iter().map(|&k| g.rewards()[k]).collect();
        assert_eq!(fit_critic(&mut c, &[0; 4], &joints, &targets).unwrap(), 0.0);
    }

    #[test]
    fn matching_targets_leave_params_unchanged() {
        let space = JointActionSpace::new(2, 2);
        let mut c = CriticModel::Learned(TabularCritic::action_value(space, 1, 0.01));
        let before = c.clone();
        let loss = fit_critic(&mut c, &[0, 0], &[1, 3], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(c, before);
    }

    #[test]
    fn constant_target_loss_decreases_monotonically() {
        let space = JointActionSpace::new(1, 1);
        let mut c = CriticModel::Learned(TabularCritic::state_value(space, 1, 0.01));
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let loss = fit_critic(&mut c, &[0; 8], &[0; 8], &[3.0; 8]).unwrap();
            assert!(loss < last, "{loss} >= {last}");
            last = loss;
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let space = JointActionSpace::new(1, 1);
        let mut c = CriticModel::Learned(TabularCritic::state_value(space, 1, 0.01));
        assert!(fit_critic(&mut c, &[], &[], &[]).is_err());
    }
}
