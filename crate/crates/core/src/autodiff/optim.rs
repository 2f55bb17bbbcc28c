use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor in the
/// store's element type so that saved state round-trips exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |_| store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Adam {
            config,
            t: 0,
            m: zeros(0),
            v: zeros(1),
        }
    }

    /// Applies one update from the accumulated gradients of every trainable
    /// parameter. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for id in store.ids() {
            let t = store.get(id);
            if t.requires_grad && t.grad().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(store.name(id).to_string()));
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let tensor = store.get_mut(id);
            if !tensor.requires_grad {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let grad = tensor.grad().to_vec();
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i].f64();
                let mi = beta1 * m[i].f64() + (1.0 - beta1) * g;
                let vi = beta2 * v[i].f64() + (1.0 - beta2) * g * g;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                *p = T::of(p.f64() - update);
            }
        }
        Ok(())
    }
}
