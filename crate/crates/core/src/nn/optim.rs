//! First-order optimizers with explicit, serializable state.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| (0..p.len()).map(|i| Tensor::zeros(p.get(i).shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - (c.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (c.beta2 as f64).powi(self.step as i32);
        let step_size = (c.learning_rate as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (i, g) in grads.iter().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + c.eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f32,
    pub eps: f32,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self { rho: 0.95, eps: 1e-6 }
    }
}

/// Adadelta; the learning rate is passed per update so a scheduler can own it.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta {
    pub config: AdadeltaConfig,
    pub sq_grad: Vec<Tensor>,
    pub sq_delta: Vec<Tensor>,
}

impl Adadelta {
    pub fn new(config: AdadeltaConfig, params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| (0..p.len()).map(|i| Tensor::zeros(p.get(i).shape())).collect();
        Self {
            config,
            sq_grad: zeros(params),
            sq_delta: zeros(params),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], learning_rate: f32) {
        assert_eq!(grads.len(), params.len());
        let AdadeltaConfig { rho, eps } = self.config;
        for (i, g) in grads.iter().enumerate() {
            let eg = self.sq_grad[i].data_mut();
            let ed = self.sq_delta[i].data_mut();
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                eg[j] = rho * eg[j] + (1.0 - rho) * gj * gj;
                let delta = (ed[j] + eps).sqrt() / (eg[j] + eps).sqrt() * gj;
                ed[j] = rho * ed[j] + (1.0 - rho) * delta * delta;
                p[j] -= learning_rate * delta;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.push("x", Tensor::from_vec(&[2], vec![3.0, -2.0]));
        s
    }

    fn grad(s: &ParamStore) -> Vec<Tensor> {
        vec![s.get(0).clone()] // ∇ ½‖x‖²
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut s = quadratic_store();
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &s);
        let g = grad(&s);
        opt.update(&mut s, &g);
        // Bias correction makes the first step ≈ lr · sign(g).
        assert!((s.get(0).data()[0] - 2.9).abs() < 1e-5);
        assert!((s.get(0).data()[1] + 1.9).abs() < 1e-5);
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        let mut s = quadratic_store();
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() }, &s);
        for _ in 0..500 {
            let g = grad(&s);
            adam.update(&mut s, &g);
        }
        assert!(s.get(0).data().iter().all(|v| v.abs() < 0.05));

        let mut s = quadratic_store();
        let mut ada = Adadelta::new(AdadeltaConfig::default(), &s);
        for _ in 0..2000 {
            let g = grad(&s);
            ada.update(&mut s, &g, 1.0);
        }
        assert!(s.get(0).data().iter().all(|v| v.abs() < 1.0));
    }
}
