use serde::{Deserialize, Serialize};

use crate::diffarray::Array4;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the trainable tensors of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Current learning rate; the schedule may lower it.
    pub lr: f64,
    pub step: u64,
    /// First and second moments indexed like the store; `None` for buffers.
    pub moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Element> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let moments = store
            .iter()
            .map(|(_, e)| match e.kind {
                crate::params::ParamKind::Trainable => {
                    let n = e.value.shape().len();
                    Some((vec![T::zero(); n], vec![T::zero(); n]))
                }
                crate::params::ParamKind::Buffer => None,
            })
            .collect();
        Adam {
            lr: config.lr,
            config,
            step: 0,
            moments,
        }
    }

    /// One update. Rejects the whole step, leaving all state untouched, if
    /// any gradient entry is non-finite.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Array4<T>]) -> Result<()> {
        if grads.len() != self.moments.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.moments.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if self.moments[i].is_some() && !g.is_finite() {
                let name = store.iter().nth(i).map(|(_, e)| e.name.clone()).unwrap_or_default();
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(self.lr / bc1);
        let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (id, (slot, g)) in ids.into_iter().zip(self.moments.iter_mut().zip(grads)) {
            let Some((m, v)) = slot else { continue };
            let w = store.value_mut(id).data_mut();
            for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w = *w - step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
