//! SGD with momentum and Adam, both with coupled (L2-in-gradient) weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimSpec {
    pub kind: OptimKind,
    pub lr: f64,
    pub weight_decay: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_hat")]
    pub eps_hat: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_hat() -> f64 {
    1e-8
}

impl OptimSpec {
    pub fn sgd(lr: f64, weight_decay: f64, momentum: f64) -> Self {
        OptimSpec {
            kind: OptimKind::SgdMomentum,
            lr,
            weight_decay,
            momentum,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_hat: default_eps_hat(),
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        OptimSpec {
            kind: OptimKind::Adam,
            lr,
            weight_decay,
            momentum: default_momentum(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_hat: default_eps_hat(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta2", "must be in [0, 1)"));
        }
        if !(self.eps_hat > 0.0) {
            return Err(Error::config("eps_hat", "must be positive"));
        }
        Ok(())
    }
}

fn check_lengths(params: usize, grads: usize, buffers: &[usize]) -> Result<()> {
    if grads != params || buffers.iter().any(|&b| b != params) {
        return Err(Error::Shape(format!(
            "{params} parameters, {grads} gradients, buffers {buffers:?}"
        )));
    }
    Ok(())
}

/// `g' = g + wd·p;  v ← μ·v + g';  p ← p − lr·v`
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], spec: &OptimSpec) -> Result<()> {
    check_lengths(params.len(), grads.len(), &[velocity.len()])?;
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + spec.weight_decay * *p;
        *v = spec.momentum * *v + g;
        *p -= spec.lr * *v;
    }
    Ok(())
}

/// Bias-corrected Adam update for step number `step` (1-based).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    spec: &OptimSpec,
) -> Result<()> {
    check_lengths(params.len(), grads.len(), &[m.len(), v.len()])?;
    if step == 0 {
        return Err(Error::config("step", "Adam steps are numbered from 1"));
    }
    let c1 = 1.0 - spec.beta1.powi(step as i32);
    let c2 = 1.0 - spec.beta2.powi(step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g + spec.weight_decay * *p;
        *m = spec.beta1 * *m + (1.0 - spec.beta1) * g;
        *v = spec.beta2 * *v + (1.0 - spec.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= spec.lr * m_hat / (v_hat.sqrt() + spec.eps_hat);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Buffers {
    weights: [Vec<f64>; 2],
    biases: [Vec<f64>; 2],
}

/// Optimizer state for a whole network: velocities for SGD, first and second
/// moments plus a step counter for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    spec: OptimSpec,
    layers: Vec<Buffers>,
    step: u64,
}

impl OptimState {
    pub fn new(spec: OptimSpec, net: &Network) -> Result<Self> {
        spec.validate()?;
        let layers = net
            .layers
            .iter()
            .map(|l| Buffers {
                weights: [vec![0.0; l.weights.len()], vec![0.0; l.weights.len()]],
                biases: [vec![0.0; l.biases.len()], vec![0.0; l.biases.len()]],
            })
            .collect();
        Ok(OptimState {
            spec,
            layers,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Layers with index below `frozen_below` are left
    /// untouched, buffers included.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, frozen_below: Option<usize>) -> Result<()> {
        if grads.layers.len() != net.layers.len() || self.layers.len() != net.layers.len() {
            return Err(Error::Shape("gradients or optimizer state do not match the network".into()));
        }
        self.step += 1;
        let first = frozen_below.unwrap_or(0);
        for ((layer, g), buf) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.layers)
            .skip(first)
        {
            match self.spec.kind {
                OptimKind::SgdMomentum => {
                    sgd_momentum_step(&mut layer.weights, &g.weights, &mut buf.weights[0], &self.spec)?;
                    sgd_momentum_step(&mut layer.biases, &g.biases, &mut buf.biases[0], &self.spec)?;
                }
                OptimKind::Adam => {
                    let [m, v] = &mut buf.weights;
                    adam_step(&mut layer.weights, &g.weights, m, v, self.step, &self.spec)?;
                    let [m, v] = &mut buf.biases;
                    adam_step(&mut layer.biases, &g.biases, m, v, self.step, &self.spec)?;
                }
            }
        }
        Ok(())
    }
}
