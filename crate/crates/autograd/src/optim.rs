use indexmap::IndexMap;
use ndarray::{ArrayD, Zip};

use crate::element::Element;
use crate::graph::Gradients;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub first_moment: IndexMap<String, ArrayD<T>>,
    pub second_moment: IndexMap<String, ArrayD<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: IndexMap::new(),
            second_moment: IndexMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_real(self.config.beta1);
        let b2 = T::from_real(self.config.beta2);
        let eps = T::from_real(self.config.eps);
        let one = T::one();
        let corr1 = T::from_real(1.0 - self.config.beta1.powi(t));
        let corr2 = T::from_real(1.0 - self.config.beta2.powi(t));
        let lr = T::from_real(lr);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self
                .first_moment
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .second_moment
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

/// Rescales gradients so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Element>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::from_real(max_norm / norm));
    }
    norm
}
