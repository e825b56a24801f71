use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with classical L2 weight decay: `wd · θ` is added to the gradient
/// before the moment updates.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.values(id).len()]).collect();
        Self { config, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must be aligned with the store (see
    /// [`super::Gradients::param_grads`]).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != store.len() || grads.len() != self.first.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, store has {}, got {} gradients",
                self.first.len(),
                store.len(),
                grads.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if g.len() != store.values(id).len() {
                return Err(Error::shape(format!("gradient shape mismatch for {}", store.name(id))));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let params = store.values_mut(id);
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..params.len() {
                let g = grads[k][i] + weight_decay * params[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        store.add("p", vec![3], vec![1.0, -2.0, 0.5]);
        let before = store.clone();
        let mut adam = Adam::new(&store, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store, &[vec![0.0; 3]], 0.1, 0.0).unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t=1: m̂ = g, v̂ = g², update = lr·g/(|g|+ε) ≈ lr
        let mut store = ParamStore::new();
        let id = store.add("p", vec![1], vec![0.0]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[vec![1.0]], 0.1, 0.0).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.values(id)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut store = ParamStore::new();
        let id = store.add("p", vec![2], vec![0.7, 0.7]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        for s in 0..50 {
            let g = (s as f64 * 0.37).sin();
            adam.step(&mut store, &[vec![g, g]], 0.01, 1e-4).unwrap();
            let v = store.values(id);
            assert_eq!(v[0], v[1]);
        }
    }

    #[test]
    fn weight_decay_acts_as_l2_gradient() {
        // with zero loss gradient the decay term alone drives the update
        let mut store = ParamStore::new();
        let id = store.add("p", vec![1], vec![2.0]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[vec![0.0]], 0.1, 1e-4).unwrap();
        assert!(store.values(id)[0] < 2.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = ParamStore::new();
        store.add("p", vec![2], vec![0.0, 0.0]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        assert!(adam.step(&mut store, &[vec![0.0]], 0.1, 0.0).is_err());
    }
}
