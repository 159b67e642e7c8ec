use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale the global gradient norm down to this value when exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Global L2 norm of all accumulated gradients.
    pub fn grad_norm(store: &ParamStore<T>) -> f64 {
        store
            .iter()
            .filter_map(|(_, p)| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Apply one update from the gradients accumulated in `store`, then clear them.
    ///
    /// A non-finite gradient rejects the whole step and names the parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if let Some(g) = &p.grad {
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        step: self.step as usize,
                        component: format!("gradient of {}", p.name),
                    });
                }
            }
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = Self::grad_norm(store);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let lr = T::of(c.lr);
        let decay = T::of(1.0 - c.lr * c.weight_decay);
        let (inv_bc1, inv_bc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let eps = T::of(c.eps);
        let clip = T::of(clip);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            let Some(grad) = p.grad.take() else { continue };
            let k = id.index();
            let m = self.first[k].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.second[k].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let value = p.value_mut();
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g * clip;
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                let mh = *m * inv_bc1;
                let vh = *v * inv_bc2;
                *w = *w * decay - lr * mh / (vh.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Exponential moving average of parameters: `s <- d s + (1 - d) p`.
#[derive(Clone, Debug)]
pub struct Ema<T> {
    pub decay: f64,
    pub shadow: ParamStore<T>,
}

impl<T: Scalar> Ema<T> {
    /// Shadow initialized as a copy of the current parameters.
    pub fn new(store: &ParamStore<T>, decay: f64) -> Self {
        assert!(decay > 0.0 && decay < 1.0, "EMA decay must lie in (0, 1)");
        Self {
            decay,
            shadow: store.clone(),
        }
    }

    /// Shadow initialized at zero.
    pub fn zeros(store: &ParamStore<T>, decay: f64) -> Self {
        let mut ema = Self::new(store, decay);
        let ids: Vec<_> = ema.shadow.ids().collect();
        for id in ids {
            ema.shadow
                .get_mut(id)
                .value_mut()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = T::zero());
        }
        ema
    }

    pub fn update(&mut self, store: &ParamStore<T>) {
        self.update_with(store, self.decay);
    }

    /// Decay ramp `min(decay, (1 + step) / (10 + step))` so early averages track training.
    pub fn warmup_decay(&self, step: usize) -> f64 {
        self.decay.min((1.0 + step as f64) / (10.0 + step as f64))
    }

    pub fn update_with(&mut self, store: &ParamStore<T>, decay: f64) {
        let d = T::of(decay);
        let od = T::of(1.0 - decay);
        for (id, p) in store.iter() {
            let s = self.shadow.get_mut(id).value_mut();
            for (s, &v) in s.data_mut().iter_mut().zip(p.value().data()) {
                *s = d * *s + od * v;
            }
        }
    }
}
