use crate::error::{shape_err, Result};

use super::{ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    /// Moment buffers sized for every parameter currently in `store`.
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = store.params().iter().map(|p| p.value.numel()).collect();
        Self {
            config,
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(shape_err!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            ));
        }
        for (i, p) in store.params().iter().enumerate() {
            if p.value.numel() != self.first[i].len() {
                return Err(shape_err!(
                    "optimizer state for {} has the wrong size",
                    p.name
                ));
            }
        }
        self.step += 1;
        let cfg = self.config;
        let t = self.step as i32;
        let lr = T::from_f64_lossy(cfg.lr);
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let eps = T::from_f64_lossy(cfg.eps);
        let corr1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let corr2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(grad) = &p.grad else { continue };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for ((w, &g), (m, v)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
