//! A small reverse-mode differentiation tape.
//!
//! Nodes are appended in evaluation order, each carrying its forward value and
//! up to two (parent, local partial) pairs. The op set covers what policy
//! objectives need: affine maps, `tanh`, `exp`/`ln` (log-softmax), products,
//! `clip` and `min`.
//!
//! Non-smooth ops follow the usual subgradient convention: `clip` passes the
//! gradient through when the input lies inside the closed band and blocks it
//! outside; `min` routes the gradient to its first argument on ties.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct Node {
    value: f64,
    parents: [(usize, f64); 2],
    arity: u8,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: f64, parents: [(usize, f64); 2], arity: u8) -> Var {
        self.nodes.push(Node { value, parents, arity });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node; use for both inputs and constants.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, [(0, 0.0); 2], 0)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.nodes[v.0].value
    }

    fn unary(&mut self, a: Var, value: f64, d: f64) -> Var {
        self.push(value, [(a.0, d), (0, 0.0)], 1)
    }

    fn binary(&mut self, a: Var, da: f64, b: Var, db: f64, value: f64) -> Var {
        self.push(value, [(a.0, da), (b.0, db)], 2)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(a, 1.0, b, 1.0, v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(a, 1.0, b, -1.0, v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.binary(a, y, b, x, x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.unary(a, v, c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.unary(a, v, 1.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.unary(a, v, v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(a, x.ln(), 1.0 / x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).tanh();
        self.unary(a, t, 1.0 - t * t)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(a, x * x, 2.0 * x)
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let x = self.value(a);
        if x < lo {
            self.unary(a, lo, 0.0)
        } else if x > hi {
            self.unary(a, hi, 0.0)
        } else {
            self.unary(a, x, 1.0)
        }
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        if y < x {
            self.binary(a, 0.0, b, 1.0, y)
        } else {
            self.binary(a, 1.0, b, 0.0, x)
        }
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        match xs.split_first() {
            None => self.leaf(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &x| self.add(acc, x)),
        }
    }

    /// `sum_k weights[k] * xs[k] + bias` with constant weights.
    pub fn affine_const(&mut self, xs: &[Var], weights: &[f64], bias: f64) -> Var {
        let terms: Vec<Var> = xs.iter().zip(weights).map(|(&x, &w)| self.scale(x, w)).collect();
        let s = self.sum(&terms);
        self.add_const(s, bias)
    }

    /// Numerically stable log-softmax. The max-shift is a constant, so it does not
    /// change gradients.
    pub fn log_softmax(&mut self, logits: &[Var]) -> Vec<Var> {
        let shift = logits.iter().map(|&v| self.value(v)).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<Var> = logits
            .iter()
            .map(|&v| {
                let shifted = self.add_const(v, -shift);
                self.exp(shifted)
            })
            .collect();
        let total = self.sum(&exps);
        let log_total = self.ln(total);
        let lse = self.add_const(log_total, shift);
        logits.iter().map(|&v| self.sub(v, lse)).collect()
    }

    /// Adjoint of every node with respect to `output`.
    pub fn backward(&self, output: Var) -> Vec<f64> {
        let mut adjoint = vec![0.0; output.0 + 1];
        adjoint[output.0] = 1.0;
        for idx in (0..=output.0).rev() {
            let g = adjoint[idx];
            if g == 0.0 {
                continue;
            }
            let node = &self.nodes[idx];
            for &(parent, d) in &node.parents[..node.arity as usize] {
                adjoint[parent] += g * d;
            }
        }
        adjoint
    }

    /// Gradient of `output` with respect to the given leaves.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Vec<f64> {
        let adjoint = self.backward(output);
        wrt.iter().map(|v| adjoint.get(v.0).copied().unwrap_or(0.0)).collect()
    }
}

/// Value and gradient of a scalar function of `params`.
///
/// `objective` receives a fresh tape and leaf handles for `params`, and returns
/// the output node. Errors if the value or any gradient entry is not finite.
pub fn value_and_gradient<F>(params: &[f64], objective: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::with_capacity(params.len() * 4);
    let leaves: Vec<Var> = params.iter().map(|&p| tape.leaf(p)).collect();
    let out = objective(&mut tape, &leaves);
    let value = tape.value(out);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {value}")));
    }
    let grad = tape.gradient(out, &leaves);
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {k} is {}", grad[k])));
    }
    Ok((value, grad))
}

/// Forward value only, built on the same tape ops.
pub fn evaluate<F>(params: &[f64], objective: F) -> f64
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::with_capacity(params.len() * 4);
    let leaves: Vec<Var> = params.iter().map(|&p| tape.leaf(p)).collect();
    let out = objective(&mut tape, &leaves);
    tape.value(out)
}
