//! Adam with bias correction and EMA parameter shadowing.

use crate::error::{Error, Result};
use crate::nn::store::ParamStore;

/// Textbook Adam state for one parameter store.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = store.snapshot().iter().map(|t| vec![0.0; t.len()]).collect();
        let v = store.snapshot().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    /// One update from the accumulated gradients; zeroes them afterward.
    /// Fails on non-finite gradients, naming the parameter.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        use crate::nn::store::ParamId;
        for i in 0..store.n_tensors() {
            let id = ParamId(i);
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NanGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..store.n_tensors() {
            let id = ParamId(i);
            let (values, grads) = store.value_grad_mut(id);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..values.len() {
                let g = grads[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                values[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Exponential moving average of parameters, used at diffusion inference time.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub decay: f64,
    shadow: Vec<Vec<f64>>,
}

impl EmaState {
    pub fn new(store: &ParamStore, decay: f64) -> Self {
        EmaState {
            decay,
            shadow: store.snapshot(),
        }
    }

    /// `shadow <- decay * shadow + (1 - decay) * current`.
    pub fn update(&mut self, store: &ParamStore) {
        for (sh, cur) in self.shadow.iter_mut().zip(store.values()) {
            for (s, c) in sh.iter_mut().zip(cur) {
                *s = self.decay * *s + (1.0 - self.decay) * c;
            }
        }
    }

    pub fn shadow(&self) -> &[Vec<f64>] {
        &self.shadow
    }

    pub fn from_snapshot(decay: f64, shadow: Vec<Vec<f64>>) -> Self {
        EmaState { decay, shadow }
    }

    /// A copy of `store` whose values are the shadow parameters.
    pub fn shadow_store(&self, store: &ParamStore) -> Result<ParamStore> {
        let mut out = store.clone();
        out.load_snapshot(&self.shadow)?;
        Ok(out)
    }
}
