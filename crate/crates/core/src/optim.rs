//! AdamW with decoupled weight decay.

use crate::error::{dim_err, param_err, Result};
use crate::tensor::Tensor;

/// Optimizer hyper-parameters. The defaults use β₁ = 0.98 and β₂ = 0.95,
/// which inverts the usual ordering (β₂ < β₁): the second-moment estimate
/// adapts faster than the first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.98,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamWState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

impl AdamW {
    /// One update of every parameter:
    /// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)` with bias-corrected moments.
    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor], state: &mut AdamWState) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(param_err!("learning rate {} must be non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(param_err!("betas must lie in [0, 1)"));
        }
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(dim_err!(
                "adamw: {} params, {} grads, {} state slots",
                params.len(),
                grads.len(),
                state.m.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || state.m[i].len() != p.len() {
                return Err(dim_err!("adamw: slot {i} shape {:?} vs grad {:?}", p.shape(), g.shape()));
            }
        }
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *theta -= self.lr * self.weight_decay * *theta + self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
