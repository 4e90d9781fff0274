use crate::params::ParamStore;
use crate::Tensor;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Global gradient-norm clip applied before the update, if set.
    pub clip_norm: Option<f32>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam over the trainable subset of a [`ParamStore`]. Frozen parameters
/// are never touched, not even by their moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients currently stored in `store`,
    /// then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let cfg = &self.config;
        if let Some(max) = cfg.clip_norm {
            let norm = store.grad_sq_norm().sqrt() as f32;
            if norm > max && norm.is_finite() {
                store.scale_grads(max / norm);
            }
        }
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let g = store.grad(id).clone();
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let value = store.value_mut(id);
            for (((p, gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        store.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic_and_respects_freeze() {
        let mut store = ParamStore::new();
        let a = store
            .insert("a", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap())
            .unwrap();
        let b = store.insert("b", Tensor::scalar(5.0)).unwrap();
        store.set_trainable(b, false);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..500 {
            // d/da of |a|^2 is 2a; b gets a gradient too but is frozen
            let ga: Vec<f32> = store.value(a).data().iter().map(|v| 2.0 * v).collect();
            set_grad(&mut store, a, Tensor::from_vec(&[2], ga).unwrap());
            set_grad(&mut store, b, Tensor::scalar(1.0));
            opt.step(&mut store);
        }
        assert!(store.value(a).data().iter().all(|v| v.abs() < 1e-2));
        assert_eq!(store.value(b).data(), &[5.0]);
    }

    fn set_grad(store: &mut ParamStore, id: crate::ParamId, g: Tensor) {
        let mut grads: Vec<Option<Tensor>> = store.ids().map(|_| None).collect();
        grads[id.index()] = Some(g);
        store
            .accumulate(&crate::params::Gradients { grads })
            .unwrap();
    }
}
