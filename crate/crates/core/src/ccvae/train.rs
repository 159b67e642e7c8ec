use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{teacher_rows, LossVars};
use super::model::{CcVae, VaeConfig};
use super::sample::VaeSample;
use crate::error::{Error, Result};
use crate::geometry::{Frame, PointIndex, Vec3, CURVE_SAMPLES};
use crate::nn::{AdamW, AdamWConfig};
use crate::tensor::{Gradients, Graph, ParamStore, Scalar};

/// Per-component losses of one step, averaged over the batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLossReport {
    pub step: usize,
    #[serde(rename = "type")]
    pub type_: f64,
    pub anchor: f64,
    pub link: f64,
    pub edge: f64,
    pub face: f64,
    pub pose: f64,
    pub kl: f64,
    pub total: f64,
    pub grad_norm: f64,
}

impl VaeLossReport {
    fn from_values(step: usize, v: [f64; 8]) -> Self {
        Self {
            step,
            type_: v[0],
            anchor: v[1],
            link: v[2],
            edge: v[3],
            face: v[4],
            pose: v[5],
            kl: v[6],
            total: v[7],
            grad_norm: 0.0,
        }
    }

    /// Reconstruction terms only, in report order.
    pub fn reconstruction(&self) -> [f64; 6] {
        [self.type_, self.anchor, self.link, self.edge, self.face, self.pose]
    }
}

/// Loss values for one sample, with the first non-finite component named.
pub fn loss_values<T: Scalar>(g: &Graph<T>, vars: &LossVars, step: usize) -> Result<[f64; 8]> {
    let mut out = [0.0; 8];
    for (k, v) in vars.vars().iter().enumerate() {
        out[k] = g.value(*v).item().as_f64();
        if !out[k].is_finite() {
            return Err(Error::NonFinite {
                step,
                component: format!("vae {} loss", LossVars::NAMES[k]),
            });
        }
    }
    Ok(out)
}

/// Model, parameters and optimizer state for VAE training.
pub struct VaeTrainer<T: Scalar> {
    pub model: CcVae,
    pub store: ParamStore<T>,
    pub optimizer: AdamW<T>,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar> VaeTrainer<T> {
    pub fn new(config: VaeConfig, optimizer: AdamWConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = CcVae::new(config, &mut store, &mut rng)?;
        Ok(Self {
            model,
            store,
            optimizer: AdamW::new(optimizer),
            step: 0,
            rng,
        })
    }

    /// Resume from trained parameters.
    pub fn from_parts(model: CcVae, store: ParamStore<T>, optimizer: AdamWConfig, seed: u64) -> Self {
        Self {
            model,
            store,
            optimizer: AdamW::new(optimizer),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Loss and gradients for a batch without touching parameters.
    pub fn batch_gradients(
        &mut self,
        batch: &[VaeSample],
        kl_weight: f64,
    ) -> Result<(VaeLossReport, Vec<Gradients<T>>)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let d = self.model.config.latent_dim;
        let eps: Vec<Vec<f64>> = batch
            .iter()
            .map(|s| {
                (0..s.true_count() * d)
                    .map(|_| StandardNormal.sample(&mut self.rng))
                    .collect()
            })
            .collect();
        let scale = 1.0 / batch.len() as f64;
        let (model, store, step) = (&self.model, &self.store, self.step);
        let results: Vec<Result<([f64; 8], Gradients<T>)>> = batch
            .par_iter()
            .zip(eps.par_iter())
            .map(|(s, e)| {
                let mut g = Graph::new(store);
                let vars = model.losses(&mut g, s, Some(e), kl_weight)?;
                let values = loss_values(&g, &vars, step)?;
                let scaled = g.mul_scalar(vars.total, scale);
                Ok((values, g.backward(scaled)?))
            })
            .collect();
        let mut sum = [0.0; 8];
        let mut grads = Vec::with_capacity(batch.len());
        for r in results {
            let (v, gr) = r?;
            for k in 0..8 {
                sum[k] += v[k] * scale;
            }
            grads.push(gr);
        }
        Ok((VaeLossReport::from_values(self.step, sum), grads))
    }

    /// One AdamW step on the mean loss of `batch`.
    pub fn train_step(&mut self, batch: &[VaeSample]) -> Result<VaeLossReport> {
        let kl_weight = self.model.config.kl_weight;
        let (mut report, grads) = self.batch_gradients(batch, kl_weight)?;
        self.store.zero_grads();
        for g in &grads {
            g.accumulate_into(&mut self.store);
        }
        report.grad_norm = AdamW::grad_norm(&self.store);
        self.optimizer.step(&mut self.store).map_err(|e| match e {
            Error::NonFinite { component, .. } => Error::NonFinite {
                step: self.step,
                component,
            },
            other => other,
        })?;
        self.step += 1;
        Ok(report)
    }
}

/// Reconstruction quality with the posterior mean and teacher-forced geometry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeMetrics {
    pub samples: usize,
    /// Fraction of slots whose argmax type is right.
    pub type_accuracy: f64,
    /// F1 of links at probability 0.5 over adjacent-rank slot pairs.
    pub link_f1: f64,
    pub anchor_rmse: f64,
    /// Mean absolute coordinate error of edge samples.
    pub edge_l1: f64,
    /// Symmetric mean nearest-sample distance of face grids.
    pub face_deviation: f64,
}

fn symmetric_deviation(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let (ia, ib) = (PointIndex::new(a)?, PointIndex::new(b)?);
    let one =
        |from: &[Vec3], to: &PointIndex| from.iter().map(|p| to.nearest(p).0.sqrt()).sum::<f64>() / from.len() as f64;
    Ok(0.5 * (one(a, &ib) + one(b, &ia)))
}

/// Evaluate reconstruction on `samples`.
pub fn evaluate<T: Scalar>(model: &CcVae, store: &ParamStore<T>, samples: &[VaeSample]) -> Result<VaeMetrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let per: Vec<Result<[f64; 10]>> = samples
        .par_iter()
        .map(|s| {
            let mut g = Graph::inference(store);
            let (mu, _) = model.encode(&mut g, s)?;
            let z = g.gather(mu, &s.source)?;
            let zt = model.decode_features(&mut g, z)?;
            let logits = model.type_logits(&mut g, zt)?;
            let logits = g.value(logits).to_f64_vec();
            let correct = s
                .source
                .iter()
                .enumerate()
                .filter(|&(r, &src)| super::model::argmax_type(&logits[r * 3..r * 3 + 3]) == s.types[src])
                .count();
            let anchors = model.anchors(&mut g, zt)?;
            let anchors = g.value(anchors).to_f64_vec();
            let sq: f64 = s
                .source
                .iter()
                .enumerate()
                .map(|(r, &src)| {
                    (0..3)
                        .map(|k| (anchors[r * 3 + k] - s.anchors[src][k]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
            let pairs = s.link_pairs();
            if !pairs.is_empty() {
                let l = model.link_logits(&mut g, zt, &pairs)?;
                for (&(i, j), &x) in pairs.iter().zip(g.value(l).to_f64_vec().iter()) {
                    let truth = s.is_linked(s.source[i], s.source[j]);
                    match (x >= 0.0, truth) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fnn += 1.0,
                        _ => {}
                    }
                }
            }
            let (edges, edge_targets, faces, face_targets) = teacher_rows(s);
            let (mut edge_sum, mut edge_n) = (0.0, 0.0);
            if !edges.is_empty() {
                let params = model.edge_params(&mut g, zt, &edges)?;
                let params = g.value(params).to_f64_vec();
                for (k, (&(_, [a, b]), &t)) in edges.iter().zip(&edge_targets).enumerate() {
                    let curve = CcVae::curve_from_params(&params[k * 8..k * 8 + 8], s.anchors[a], s.anchors[b]);
                    for (p, q) in curve.sample_uniform(CURVE_SAMPLES).iter().zip(&s.edges[t].samples) {
                        edge_sum += (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>();
                        edge_n += 3.0;
                    }
                }
            }
            let (mut face_sum, mut face_n) = (0.0, 0.0);
            if !faces.is_empty() {
                let frames: Vec<Frame> = face_targets.iter().map(|&k| s.faces[k].frame).collect();
                let pts = model.surface_points(&mut g, zt, &faces, &frames, &s.anchors)?;
                let pts = g.value(pts).to_f64_vec();
                let gg = model.config.surface_grid.pow(2);
                for (k, &t) in face_targets.iter().enumerate() {
                    let block: Vec<Vec3> = pts[k * gg * 3..(k + 1) * gg * 3]
                        .chunks(3)
                        .map(|c| [c[0], c[1], c[2]])
                        .collect();
                    face_sum += symmetric_deviation(&block, &s.faces[t].points)?;
                    face_n += 1.0;
                }
            }
            Ok([
                correct as f64,
                s.slots() as f64,
                sq,
                tp,
                fp,
                fnn,
                edge_sum,
                edge_n,
                face_sum,
                face_n,
            ])
        })
        .collect();
    let mut acc = [0.0; 10];
    for r in per {
        let v = r?;
        for k in 0..10 {
            acc[k] += v[k];
        }
    }
    let (tp, fp, fnn) = (acc[3], acc[4], acc[5]);
    let f1 = if tp + fp + fnn == 0.0 {
        1.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fnn)
    };
    Ok(VaeMetrics {
        samples: samples.len(),
        type_accuracy: acc[0] / acc[1],
        link_f1: f1,
        anchor_rmse: (acc[2] / acc[1]).sqrt(),
        edge_l1: if acc[7] > 0.0 { acc[6] / acc[7] } else { 0.0 },
        face_deviation: if acc[9] > 0.0 { acc[8] / acc[9] } else { 0.0 },
    })
}

/// Posterior means `μ`, row-major `n × D` over diagram nodes.
pub fn encode_mean<T: Scalar>(model: &CcVae, store: &ParamStore<T>, s: &VaeSample) -> Result<Vec<f64>> {
    let mut g = Graph::inference(store);
    let (mu, _) = model.encode(&mut g, s)?;
    Ok(g.value(mu).to_f64_vec())
}

/// `(μ, logσ)` rows over diagram nodes.
pub fn encode_params<T: Scalar>(model: &CcVae, store: &ParamStore<T>, s: &VaeSample) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::inference(store);
    let (mu, logsig) = model.encode(&mut g, s)?;
    Ok((g.value(mu).to_f64_vec(), g.value(logsig).to_f64_vec()))
}
