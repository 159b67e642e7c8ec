use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{FlowBackbone, FlowConfig};
use super::ops::{euler_integrate, flow_loss, rf_interpolate_and_target, sample_t_logit_normal, Inpaint, LatentSet};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{AdamW, AdamWConfig, Ema};
use crate::tensor::{Gradients, Graph, ParamStore, Scalar, Tensor};

/// Fraction of rows held fixed when a training sample simulates in-painting.
pub const INPAINT_FRACTION: f64 = 0.2;

/// One training element: standardized latents and an optional condition cloud.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub latents: LatentSet,
    pub cloud: Option<Vec<Vec3>>,
}

/// Training schedule knobs of the flow model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowTrainConfig {
    pub t_mean: f64,
    pub t_std: f64,
    pub ema_decay: f64,
    /// Probability that a sample hides a random fifth of its rows from the loss.
    pub inpaint_probability: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            t_mean: 0.0,
            t_std: 1.0,
            ema_decay: 0.9999,
            inpaint_probability: 0.5,
        }
    }
}

/// Batch-mean flow loss of one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowLossReport {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Per-sample draws that fully determine its loss.
#[derive(Clone, Debug)]
pub struct FlowDraw {
    pub t: f64,
    pub z0: Vec<f64>,
    /// Rows that contribute to the loss.
    pub loss_rows: Vec<usize>,
}

impl FlowDraw {
    pub fn sample(rng: &mut impl Rng, set: &LatentSet, config: &FlowTrainConfig) -> Self {
        let t = sample_t_logit_normal(rng, config.t_mean, config.t_std);
        let z0 = (0..set.values.len()).map(|_| StandardNormal.sample(rng)).collect();
        let hidden = if set.rows > 1 && rng.random_bool(config.inpaint_probability.clamp(0.0, 1.0)) {
            ((set.rows as f64 * INPAINT_FRACTION).round() as usize).clamp(1, set.rows - 1)
        } else {
            0
        };
        let mut keep = vec![true; set.rows];
        for i in sample_indices(rng, set.rows, hidden) {
            keep[i] = false;
        }
        Self {
            t,
            z0,
            loss_rows: (0..set.rows).filter(|&i| keep[i]).collect(),
        }
    }
}

/// Loss of one sample under fixed draws.
pub fn sample_loss<T: Scalar>(
    model: &FlowBackbone,
    g: &mut Graph<T>,
    s: &FlowSample,
    draw: &FlowDraw,
) -> Result<crate::tensor::Var> {
    let set = &s.latents;
    let (zt, v) = rf_interpolate_and_target(&draw.z0, &set.values, draw.t)?;
    let z = g.constant(Tensor::from_f64(&[set.rows, set.dim], &zt)?);
    let cond = match &s.cloud {
        Some(c) => model.encode_condition(g, c)?,
        None => None,
    };
    let pred = model.forward(g, z, draw.t, cond)?;
    let (pred, target) = if draw.loss_rows.len() == set.rows {
        (pred, v)
    } else {
        let target = draw
            .loss_rows
            .iter()
            .flat_map(|&r| v[r * set.dim..(r + 1) * set.dim].iter().copied())
            .collect();
        (g.gather(pred, &draw.loss_rows)?, target)
    };
    flow_loss(g, pred, &target)
}

/// Flow model, parameters, optimizer and EMA shadow.
pub struct FlowTrainer<T: Scalar> {
    pub model: FlowBackbone,
    pub store: ParamStore<T>,
    pub optimizer: AdamW<T>,
    pub ema: Ema<T>,
    pub config: FlowTrainConfig,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar> FlowTrainer<T> {
    pub fn new(model: FlowConfig, optimizer: AdamWConfig, config: FlowTrainConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = FlowBackbone::new(model, &mut store, &mut rng)?;
        if !(config.ema_decay > 0.0 && config.ema_decay < 1.0) {
            return Err(Error::Config("flow ema_decay must lie in (0, 1)".into()));
        }
        Ok(Self {
            ema: Ema::new(&store, config.ema_decay),
            model,
            store,
            optimizer: AdamW::new(optimizer),
            config,
            step: 0,
            rng,
        })
    }

    pub fn batch_gradients(&mut self, batch: &[FlowSample]) -> Result<(f64, Vec<Gradients<T>>)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let draws: Vec<FlowDraw> = batch
            .iter()
            .map(|s| FlowDraw::sample(&mut self.rng, &s.latents, &self.config))
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let (model, store, step) = (&self.model, &self.store, self.step);
        let results: Vec<Result<(f64, Gradients<T>)>> = batch
            .par_iter()
            .zip(draws.par_iter())
            .map(|(s, d)| {
                let mut g = Graph::new(store);
                let l = sample_loss(model, &mut g, s, d)?;
                let value = g.value(l).item().as_f64();
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        step,
                        component: "flow loss".into(),
                    });
                }
                let scaled = g.mul_scalar(l, scale);
                Ok((value, g.backward(scaled)?))
            })
            .collect();
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(batch.len());
        for r in results {
            let (v, gr) = r?;
            loss += v * scale;
            grads.push(gr);
        }
        Ok((loss, grads))
    }

    pub fn train_step(&mut self, batch: &[FlowSample]) -> Result<FlowLossReport> {
        let (loss, grads) = self.batch_gradients(batch)?;
        self.store.zero_grads();
        for g in &grads {
            g.accumulate_into(&mut self.store);
        }
        let grad_norm = AdamW::grad_norm(&self.store);
        self.optimizer.step(&mut self.store).map_err(|e| match e {
            Error::NonFinite { component, .. } => Error::NonFinite {
                step: self.step,
                component,
            },
            other => other,
        })?;
        let decay = self.ema.warmup_decay(self.step);
        self.ema.update_with(&self.store, decay);
        let report = FlowLossReport {
            step: self.step,
            loss,
            grad_norm,
        };
        self.step += 1;
        Ok(report)
    }
}

/// Sampler settings.
#[derive(Clone, Debug)]
pub struct SampleOptions<'a> {
    pub steps: usize,
    pub particles: usize,
    pub cloud: Option<&'a [Vec3]>,
    pub inpaint: Option<&'a Inpaint>,
}

/// Draw one latent set by Euler integration from Gaussian noise.
pub fn sample_latents<T: Scalar>(
    model: &FlowBackbone,
    store: &ParamStore<T>,
    options: &SampleOptions<'_>,
    rng: &mut impl Rng,
) -> Result<LatentSet> {
    let d = model.config.latent_dim;
    if options.particles == 0 {
        return Err(Error::Config("particle count must be positive".into()));
    }
    let z0: Vec<f64> = (0..options.particles * d).map(|_| StandardNormal.sample(rng)).collect();
    let z = euler_integrate(&z0, d, options.steps, options.inpaint, |z, t| {
        model.velocity(store, z, t, options.cloud)
    })?;
    LatentSet::new(options.particles, d, z)
}
