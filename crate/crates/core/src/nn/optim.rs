use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

/// Adaptive moment estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub(crate) m: Vec<Vec<f32>>,
    pub(crate) v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f32) -> Self {
        Self::with_moments(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(store: &ParamStore, lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, t)| vec![0.0; t.len()])
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Applies one update, then clears `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut ParamGrads) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::MissingGradients(format!(
                "{} buffers for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if let Some(id) = store.ids().find(|&id| grads.get(id).is_none()) {
            return Err(Error::MissingGradients(store.name(id).to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id).expect("checked above");
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        grads.clear();
        Ok(())
    }
}
