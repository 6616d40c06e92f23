use serde::{Deserialize, Serialize};

use crate::data_io::Checkpoint;
use crate::nn::{ParamStore, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam. Moments are kept for every parameter in store order;
/// frozen parameters are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Result<Self> {
        let c = config;
        if !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam hyperparameters β₁={} β₂={} ε={}", c.beta1, c.beta2, c.eps)));
        }
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Ok(Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// One update with the gradients currently held by `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let c1 = T::lit(1.0 - beta1.powf(self.t as f64));
        let c2 = T::lit(1.0 - beta2.powf(self.t as f64));
        let (lr, eps) = (T::lit(lr), T::lit(eps));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (k, (w, &g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
                md[k] = b1 * md[k] + (T::one() - b1) * g;
                vd[k] = b2 * vd[k] + (T::one() - b2) * g * g;
                if lr != T::zero() {
                    let mh = md[k] / c1;
                    let vh = vd[k] / c2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }

    pub(crate) fn save_into(&self, ckpt: &mut Checkpoint, store: &ParamStore<T>) {
        for ((p, m), v) in store.iter().zip(&self.m).zip(&self.v) {
            ckpt.push_tensor(format!("adam/m/{}", p.name), m);
            ckpt.push_tensor(format!("adam/v/{}", p.name), v);
        }
    }

    pub(crate) fn load_from(&mut self, ckpt: &Checkpoint, store: &ParamStore<T>, t: u64) -> Result<()> {
        for ((p, m), v) in store.iter().zip(&mut self.m).zip(&mut self.v) {
            for (slot, kind) in [(m, "m"), (v, "v")] {
                let key = format!("adam/{kind}/{}", p.name);
                let c = ckpt.get(&key).ok_or_else(|| Error::Config(format!("checkpoint has no optimiser tensor `{key}`")))?;
                if c.dims != slot.shape() {
                    return Err(Error::Config(format!("`{key}`: checkpoint shape {:?}, model shape {:?}", c.dims, slot.shape())));
                }
                *slot = c.to_tensor()?;
            }
        }
        self.t = t;
        Ok(())
    }
}

/// `lr₀ (1 + cos(π t / total)) / 2`, clamped to `[0, lr₀]`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let phase = (t.min(total) as f64 / total as f64) * std::f64::consts::PI;
    (lr0 * (1.0 + phase.cos()) / 2.0).max(0.0)
}
