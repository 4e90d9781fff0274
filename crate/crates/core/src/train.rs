//! Mini-batch Adam training shared by the estimator and the refiner.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use strokepose_nn::{Adam, AdamConfig, Graph, NodeId, ParamStore};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f32>,
    /// Largest random translation, in input pixels, applied to estimator
    /// training samples.
    pub max_shift: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            grad_clip: None,
            max_shift: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Mean mini-batch loss after each iteration (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
}

pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss\n");
    for r in records {
        s.push_str(&format!("{},{}\n", r.iteration, r.loss));
    }
    s
}

/// Anything owning a parameter store.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl Trainable for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

/// Runs `cfg.iterations` Adam steps over samples `0..n`, visited in
/// shuffled epochs. `sample_loss` adds the loss of one sample to a fresh
/// graph over the model's store. Only trainable parameters change.
pub fn train_loop<M, F>(
    model: &mut M,
    cfg: &TrainConfig,
    n: usize,
    mut sample_loss: F,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>>
where
    M: Trainable,
    F: FnMut(&M, &mut Graph<'_>, usize) -> Result<NodeId>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Dataset("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            clip_norm: cfg.grad_clip,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut records = Vec::with_capacity(cfg.iterations);
    model.params_mut().zero_grad();
    for it in 1..=cfg.iterations {
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let grads = {
                let mut g = Graph::new(model.params());
                let loss = sample_loss(model, &mut g, i)?;
                total += g.value(loss).data()[0] as f64;
                g.backward(loss)?
            };
            model.params_mut().accumulate(&grads)?;
        }
        let store = model.params_mut();
        store.scale_grads(1.0 / cfg.batch_size as f32);
        adam.step(store);
        let loss = total / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Invalid(format!("training diverged at iteration {it}")));
        }
        let rec = LossRecord { iteration: it, loss };
        on_record(&rec);
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use strokepose_nn::Tensor;

    #[test]
    fn fits_a_linear_map() {
        // joint_mix over one branch is y = w·x + b per channel
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::zeros(&[1, 1])).unwrap();
        let b = store.insert("b", Tensor::zeros(&[1])).unwrap();
        let xs: Vec<f32> = (0..16).map(|i| i as f32 / 8.0 - 1.0).collect();
        let cfg = TrainConfig {
            iterations: 1500,
            batch_size: 4,
            learning_rate: 0.02,
            ..TrainConfig::default()
        };
        let log = train_loop(
            &mut store,
            &cfg,
            xs.len(),
            |_, g, i| {
                let x = g.input(Tensor::full(&[1, 1, 1], xs[i]));
                let (wn, bn) = (g.param(w), g.param(b));
                let y = g.joint_mix(&[x], wn, bn)?;
                Ok(g.mse(y, &Tensor::full(&[1, 1, 1], 3.0 * xs[i] - 0.5))?)
            },
            |_| {},
        )
        .unwrap();
        assert!(log.last().unwrap().loss < 1e-4);
        assert!((store.value(w).data()[0] - 3.0).abs() < 1e-2);
        assert!((store.value(b).data()[0] + 0.5).abs() < 1e-2);
    }
}
