//! Classic (heavy-ball) momentum SGD: `v ← μ·v + g; p ← p − lr·v`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Vec<f64>>,
    momentum: f64,
    iteration: usize,
}

impl OptimizerState {
    /// One zeroed velocity buffer per parameter tensor, sized by `shapes`.
    pub fn new(sizes: &[usize], momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            velocity: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            momentum,
            iteration: 0,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update in place. `lrs[t]` is the step size for tensor `t`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lrs: &[f64]) -> Result<()> {
        let t = self.velocity.len();
        if params.len() != t || grads.len() != t || lrs.len() != t {
            return Err(Error::shape(format!(
                "sgd: {t} velocity buffers, {} params, {} grads, {} rates",
                params.len(),
                grads.len(),
                lrs.len()
            )));
        }
        for (idx, ((p, g), v)) in params.iter().zip(grads).zip(&self.velocity).enumerate() {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(Error::shape(format!(
                    "sgd: tensor {idx} has {} params, {} grads, {} velocity entries",
                    p.len(),
                    g.len(),
                    v.len()
                )));
            }
        }
        let mu = self.momentum;
        for (((p, g), v), &lr) in params.iter_mut().zip(grads).zip(&mut self.velocity).zip(lrs) {
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        self.iteration += 1;
        Ok(())
    }
}

/// Single-tensor convenience wrapper around [`OptimizerState::step`].
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    state.step(&mut [params], &[grads], &[lr])
}
