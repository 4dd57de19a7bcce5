//! Adam optimizer over sequences of tensors.

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates are kept per slot; slot `i` is the `i`-th tensor passed
/// to [`Adam::step`], so callers must pass tensors in a stable order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn step<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a mut Tensor, &'a Tensor)>) {
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (slot, (p, g)) in pairs.into_iter().enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            if slot == self.m.len() {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= learning_rate * mh / (vh.sqrt() + eps);
            }
        }
    }

    /// Update every tensor of `params` from the same-named entry of `grads`.
    pub fn step_params(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        let pairs: Vec<_> = params
            .iter_mut()
            .map(|(name, p)| {
                let g = grads.get(name).unwrap_or_else(|| panic!("no gradient for `{name}`"));
                (p, g)
            })
            .collect();
        self.step(pairs);
    }
}
