use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl RmsProp {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            decay: 0.99,
            eps: 1e-8,
        }
    }

    /// `s <- decay*s + (1-decay)*g^2; w <- w - lr*g/(sqrt(s)+eps)`, then
    /// clears gradients. Non-finite gradients abort before any update.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", p.name),
                    iteration: store.steps as usize,
                });
            }
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            for ((w, g), s) in p
                .value
                .data
                .iter_mut()
                .zip(&p.grad.data)
                .zip(p.sq_avg.data.iter_mut())
            {
                *s = self.decay * *s + (1.0 - self.decay) * g * g;
                *w -= self.lr * g / (s.sqrt() + self.eps);
            }
        }
        store.zero_grad();
        store.steps += 1;
        Ok(())
    }
}
