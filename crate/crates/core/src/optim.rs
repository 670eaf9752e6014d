use serde::{Deserialize, Serialize};

/// RMSProp without momentum or weight decay.
///
/// `v <- alpha * v + (1 - alpha) * g^2`, then `p <- p -/+ lr * g / (sqrt(v) + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    square_avg: Vec<f64>,
}

impl RmsProp {
    pub const DEFAULT_LR: f64 = 5e-4;
    pub const DEFAULT_ALPHA: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(n_params: usize, lr: f64, alpha: f64, eps: f64) -> Self {
        Self {
            lr,
            alpha,
            eps,
            square_avg: vec![0.0; n_params],
        }
    }

    pub fn with_defaults(n_params: usize) -> Self {
        Self::new(n_params, Self::DEFAULT_LR, Self::DEFAULT_ALPHA, Self::DEFAULT_EPS)
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], sign: f64) {
        debug_assert_eq!(params.len(), grad.len());
        debug_assert_eq!(params.len(), self.square_avg.len());
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(&mut self.square_avg) {
            *v = self.alpha * *v + (1.0 - self.alpha) * g * g;
            *p += sign * self.lr * g / (v.sqrt() + self.eps);
        }
    }

    /// Gradient ascent step (maximize).
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step(params, grad, 1.0);
    }

    /// Gradient descent step (minimize).
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step(params, grad, -1.0);
    }
}
