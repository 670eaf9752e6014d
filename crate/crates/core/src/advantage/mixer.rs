use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::optim::RmsProp;

/// Unit-weight sum of per-agent advantages.
pub fn mix_asum(advantages: &[f64]) -> f64 {
    advantages.iter().sum()
}

/// State-conditioned mixer with non-negative weights.
///
/// The state is one-hot encoded, so the weight of agent `i` in state `s` is
/// `|raw_weights[i * n_states + s]|` and the bias is `raw_bias[s]`. Taking the
/// absolute value makes every weight non-negative for any raw parameters, which
/// keeps the mixed advantage monotone in each agent's advantage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmixMixer {
    n_agents: usize,
    n_states: usize,
    raw_weights: Vec<f64>,
    raw_bias: Vec<f64>,
    #[serde(skip)]
    optimizer: Option<RmsProp>,
}

impl AmixMixer {
    /// Weights of exactly 1 and zero bias: reduces to [`mix_asum`].
    pub fn unit(n_agents: usize, n_states: usize) -> Self {
        Self {
            n_agents,
            n_states,
            raw_weights: vec![1.0; n_agents * n_states],
            raw_bias: vec![0.0; n_states],
            optimizer: None,
        }
    }

    /// Raw weights uniform in `(-scale, scale)` (signs included), zero bias.
    pub fn random(n_agents: usize, n_states: usize, scale: f64, rng: &mut dyn RngCore) -> Self {
        let raw_weights = (0..n_agents * n_states).map(|_| rng.random_range(-scale..scale)).collect();
        Self {
            n_agents,
            n_states,
            raw_weights,
            raw_bias: vec![0.0; n_states],
            optimizer: None,
        }
    }

    pub fn from_raw(n_agents: usize, n_states: usize, raw_weights: Vec<f64>, raw_bias: Vec<f64>) -> Self {
        assert_eq!(raw_weights.len(), n_agents * n_states);
        assert_eq!(raw_bias.len(), n_states);
        Self {
            n_agents,
            n_states,
            raw_weights,
            raw_bias,
            optimizer: None,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn weights(&self, state: usize) -> Vec<f64> {
        (0..self.n_agents)
            .map(|i| self.raw_weights[i * self.n_states + state].abs())
            .collect()
    }

    pub fn bias(&self, state: usize) -> f64 {
        self.raw_bias[state]
    }

    pub fn mix(&self, advantages: &[f64], state: usize) -> f64 {
        self.weights(state).iter().zip(advantages).map(|(w, a)| w * a).sum::<f64>() + self.bias(state)
    }

    /// One RMSProp step on the squared error between the mixed advantage and
    /// `targets`. Returns the pre-step mean squared error.
    pub fn fit_step(&mut self, advantages: &[Vec<f64>], states: &[usize], targets: &[f64], lr: f64) -> f64 {
        let n = targets.len().max(1) as f64;
        let mut grad_w = vec![0.0; self.raw_weights.len()];
        let mut grad_b = vec![0.0; self.raw_bias.len()];
        let mut loss = 0.0;
        for ((adv, &s), &target) in advantages.iter().zip(states).zip(targets) {
            let err = self.mix(adv, s) - target;
            loss += err * err / n;
            for (i, a) in adv.iter().enumerate() {
                let k = i * self.n_states + s;
                // d|w|/dw = sign(w), taken as +1 at exactly zero.
                let sign = if self.raw_weights[k] < 0.0 { -1.0 } else { 1.0 };
                grad_w[k] += 2.0 * err * a * sign / n;
            }
            grad_b[s] += 2.0 * err / n;
        }
        let n_w = self.raw_weights.len();
        let opt = self
            .optimizer
            .get_or_insert_with(|| RmsProp::new(n_w + grad_b.len(), lr, RmsProp::DEFAULT_ALPHA, RmsProp::DEFAULT_EPS));
        let mut params: Vec<f64> = self.raw_weights.iter().chain(&self.raw_bias).copied().collect();
        let grad: Vec<f64> = grad_w.into_iter().chain(grad_b).collect();
        opt.descend(&mut params, &grad);
        self.raw_weights.copy_from_slice(&params[..n_w]);
        self.raw_bias.copy_from_slice(&params[n_w..]);
        loss
    }
}

/// Free-function form of [`AmixMixer::mix`].
pub fn mix_amix(advantages: &[f64], state: usize, mixer: &AmixMixer) -> f64 {
    mixer.mix(advantages, state)
}

/// How per-agent advantages combine into the joint advantage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Mixer {
    Asum,
    Amix(AmixMixer),
}

impl Mixer {
    pub fn weights(&self, n_agents: usize, state: usize) -> Vec<f64> {
        match self {
            Mixer::Asum => vec![1.0; n_agents],
            Mixer::Amix(m) => m.weights(state),
        }
    }

    pub fn mix(&self, advantages: &[f64], state: usize) -> f64 {
        match self {
            Mixer::Asum => mix_asum(advantages),
            Mixer::Amix(m) => m.mix(advantages, state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn asum_examples() {
        assert_eq!(mix_asum(&[1.0, -1.0, 0.0, 0.0]), 0.0);
        assert_eq!(mix_asum(&[0.0; 4]), 0.0);
        assert_eq!(mix_asum(&[0.5, 0.25, 0.25, 0.0]), 1.0);
    }

    #[test]
    fn unit_amix_reduces_to_asum() {
        let m = AmixMixer::unit(4, 3);
        for adv in [[1.0, -1.0, 0.0, 0.0], [0.5, 0.25, 0.25, 0.0], [3.0, -7.5, 2.0, 1.0]] {
            for s in 0..3 {
                assert_eq!(mix_amix(&adv, s, &m), mix_asum(&adv));
            }
        }
    }

    #[test]
    fn zero_advantages_give_bias() {
        let m = AmixMixer::from_raw(2, 2, vec![0.3, -0.2, 1.5, -4.0], vec![0.7, -1.1]);
        assert_eq!(m.mix(&[0.0, 0.0], 0), 0.7);
        assert_eq!(m.mix(&[0.0, 0.0], 1), -1.1);
    }

    #[test]
    fn weights_non_negative_and_mix_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..200 {
            let m = AmixMixer::random(4, 3, 2.0, &mut rng);
            let s = trial % 3;
            assert!(m.weights(s).iter().all(|&w| w >= 0.0));
            let adv: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let base = m.mix(&adv, s);
            for i in 0..4 {
                let mut bumped = adv.clone();
                bumped[i] += rng.random_range(0.0..3.0);
                assert!(m.mix(&bumped, s) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn fit_step_reduces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = AmixMixer::random(3, 1, 1.0, &mut rng);
        let adv: Vec<Vec<f64>> = (0..32).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = adv.iter().map(|a| 2.0 * a[0] + 0.5 * a[1] + a[2]).collect();
        let states = vec![0; 32];
        let first = m.fit_step(&adv, &states, &targets, 0.01);
        let mut last = first;
        for _ in 0..500 {
            last = m.fit_step(&adv, &states, &targets, 0.01);
        }
        assert!(last < first * 0.1, "{first} -> {last}");
    }
}
