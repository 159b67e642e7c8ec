use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{
    fourier_dim, fourier_rows, Activation, CrossAttentionBlock, Linear, Mlp, MultiHeadAttention, RmsNorm, SwiGlu,
};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Architecture of the velocity network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub latent_dim: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Sinusoid frequencies of the time embedding.
    pub time_frequencies: usize,
    /// Point-cloud conditioning; zero disables the condition stream.
    pub condition_tokens: usize,
    pub condition_bands: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            dim: 128,
            layers: 6,
            heads: 4,
            time_frequencies: 64,
            condition_tokens: 0,
            condition_bands: 6,
        }
    }
}

impl FlowConfig {
    /// Small configuration for tests.
    pub fn tiny() -> Self {
        Self {
            latent_dim: 4,
            dim: 16,
            layers: 2,
            heads: 2,
            time_frequencies: 8,
            condition_tokens: 0,
            condition_bands: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.dim == 0 || self.heads == 0 || self.time_frequencies == 0 {
            return Err(Error::Config("flow widths must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "flow.dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Sinusoidal features `[sin(t ω_k), cos(t ω_k)]` with log-spaced `ω_k`.
pub fn time_features(t: f64, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies);
    for k in 0..frequencies {
        let w = 1000f64.powf(-(k as f64) / frequencies as f64) * 1000.0;
        out.push((t * w).sin());
    }
    for k in 0..frequencies {
        let w = 1000f64.powf(-(k as f64) / frequencies as f64) * 1000.0;
        out.push((t * w).cos());
    }
    out
}

/// Condition-stream parts of one block.
#[derive(Clone, Debug)]
struct ConditionBranch {
    norm_latent: RmsNorm,
    norm_cond: RmsNorm,
    /// Latent queries read condition tokens.
    read: MultiHeadAttention,
    /// Per-channel gate on `read`, initialized at zero.
    gate: ParamId,
    /// Condition-stream update; absent in the last block, whose condition output is unused.
    update: Option<ConditionUpdate>,
}

/// Condition queries attend over both streams, then a feed-forward.
#[derive(Clone, Debug)]
struct ConditionUpdate {
    joint: MultiHeadAttention,
    norm_ffn: RmsNorm,
    ffn: SwiGlu,
}

/// Transformer block with adaptive shift, scale and gate from the time embedding.
#[derive(Clone, Debug)]
struct AdaBlock {
    modulation: Linear,
    attn: MultiHeadAttention,
    ffn: SwiGlu,
    condition: Option<ConditionBranch>,
}

/// Set-equivariant velocity network over latent rows.
#[derive(Clone, Debug)]
pub struct FlowBackbone {
    pub config: FlowConfig,
    input: Linear,
    time_mlp: Mlp,
    blocks: Vec<AdaBlock>,
    final_modulation: Linear,
    output: Linear,
    cloud_queries: Option<ParamId>,
    cloud_proj: Option<Linear>,
    cloud_attn: Option<CrossAttentionBlock>,
}

fn row_vector<T: Scalar>(g: &mut Graph<T>, x: Var, start: usize, len: usize) -> Result<Var> {
    let s = g.slice(x, 1, start, len)?;
    g.reshape(s, &[len])
}

/// `x (1 + scale) + shift` with `[d]` modulation vectors broadcast over rows.
fn modulate<T: Scalar>(g: &mut Graph<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let s = g.add_scalar(scale, 1.0);
    let y = g.mul(x, s)?;
    g.add(y, shift)
}

impl FlowBackbone {
    pub fn new<T: Scalar>(config: FlowConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.dim, config.heads);
        let conditioned = config.condition_tokens > 0;
        let blocks = (0..config.layers)
            .map(|l| {
                let name = format!("flow.block.{l}");
                AdaBlock {
                    modulation: Linear::zeros(store, &format!("{name}.mod"), d, 6 * d),
                    attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d, d, d, h),
                    ffn: SwiGlu::new(store, rng, &format!("{name}.ffn"), d),
                    condition: conditioned.then(|| ConditionBranch {
                        norm_latent: RmsNorm::new(store, &format!("{name}.cond.norm_latent"), d),
                        norm_cond: RmsNorm::new(store, &format!("{name}.cond.norm_cond"), d),
                        read: MultiHeadAttention::new(store, rng, &format!("{name}.cond.read"), d, d, d, h),
                        gate: store.add(format!("{name}.cond.gate"), Tensor::zeros(&[d])),
                        update: (l + 1 < config.layers).then(|| ConditionUpdate {
                            joint: MultiHeadAttention::new(store, rng, &format!("{name}.cond.joint"), d, d, d, h),
                            norm_ffn: RmsNorm::new(store, &format!("{name}.cond.norm_ffn"), d),
                            ffn: SwiGlu::new(store, rng, &format!("{name}.cond.ffn"), d),
                        }),
                    }),
                }
            })
            .collect();
        let fdim = fourier_dim(config.condition_bands);
        Ok(Self {
            input: Linear::new(store, rng, "flow.input", config.latent_dim, d, true),
            time_mlp: Mlp::new(
                store,
                rng,
                "flow.time",
                &[2 * config.time_frequencies, d, d],
                Activation::Silu,
            ),
            blocks,
            final_modulation: Linear::zeros(store, "flow.final_mod", d, 2 * d),
            output: Linear::zeros(store, "flow.output", d, config.latent_dim),
            cloud_queries: conditioned.then(|| {
                let k = config.condition_tokens;
                let bound = 1.0 / (d as f64).sqrt();
                store.add(
                    "flow.cloud.queries",
                    Tensor::from_fn(&[k, d], |_| T::of(rng.random_range(-bound..bound))),
                )
            }),
            cloud_proj: conditioned.then(|| Linear::new(store, rng, "flow.cloud.proj", fdim, d, true)),
            cloud_attn: conditioned.then(|| CrossAttentionBlock::new(store, rng, "flow.cloud.attn", d, d, h)),
            config,
        })
    }

    pub fn is_conditional(&self) -> bool {
        self.cloud_queries.is_some()
    }

    /// Encode a point cloud into condition tokens; order of points does not matter.
    pub fn encode_condition<T: Scalar>(&self, g: &mut Graph<T>, cloud: &[Vec3]) -> Result<Option<Var>> {
        let (Some(q), Some(proj), Some(attn)) = (self.cloud_queries, &self.cloud_proj, &self.cloud_attn) else {
            return Ok(None);
        };
        if cloud.is_empty() {
            return Ok(None);
        }
        let bands = self.config.condition_bands;
        let f = g.constant(Tensor::from_f64(
            &[cloud.len(), fourier_dim(bands)],
            &fourier_rows(cloud, bands),
        )?);
        let kv = proj.forward(g, f)?;
        let q = g.param(q);
        Ok(Some(attn.forward(g, q, kv)?))
    }

    /// Velocity rows for latent rows `z` (`n × D`) at time `t`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, z: Var, t: f64, condition: Option<Var>) -> Result<Var> {
        let c = &self.config;
        let d = c.dim;
        let tf = g.constant(Tensor::from_f64(
            &[1, 2 * c.time_frequencies],
            &time_features(t, c.time_frequencies),
        )?);
        let temb = self.time_mlp.forward(g, tf)?;
        let temb = g.silu(temb);
        let plain = RmsNorm::plain();
        let mut x = self.input.forward(g, z)?;
        let mut cond = condition;
        for block in &self.blocks {
            let m = block.modulation.forward(g, temb)?;
            let parts: Vec<Var> = (0..6).map(|k| row_vector(g, m, k * d, d)).collect::<Result<_>>()?;
            let h = plain.forward(g, x)?;
            let h = modulate(g, h, parts[0], parts[1])?;
            let a = block.attn.forward(g, h, h, None)?;
            let a = g.mul(a, parts[2])?;
            let mut next = g.add(x, a)?;
            if let (Some(branch), Some(cv)) = (&block.condition, cond) {
                let hl = branch.norm_latent.forward(g, next)?;
                let hc = branch.norm_cond.forward(g, cv)?;
                let r = branch.read.forward(g, hl, hc, None)?;
                let gate = g.param(branch.gate);
                let r = g.mul(r, gate)?;
                next = g.add(next, r)?;
                if let Some(u) = &branch.update {
                    let both = g.concat(&[hc, hl], 0)?;
                    let j = u.joint.forward(g, hc, both, None)?;
                    let cv = g.add(cv, j)?;
                    let hf = u.norm_ffn.forward(g, cv)?;
                    let f = u.ffn.forward(g, hf)?;
                    cond = Some(g.add(cv, f)?);
                }
            }
            let h = plain.forward(g, next)?;
            let h = modulate(g, h, parts[3], parts[4])?;
            let f = block.ffn.forward(g, h)?;
            let f = g.mul(f, parts[5])?;
            x = g.add(next, f)?;
        }
        let m = self.final_modulation.forward(g, temb)?;
        let shift = row_vector(g, m, 0, d)?;
        let scale = row_vector(g, m, d, d)?;
        let h = plain.forward(g, x)?;
        let h = modulate(g, h, shift, scale)?;
        self.output.forward(g, h)
    }

    /// Velocity as plain values for sampling.
    pub fn velocity<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        z: &[f64],
        t: f64,
        cloud: Option<&[Vec3]>,
    ) -> Result<Vec<f64>> {
        let dim = self.config.latent_dim;
        let mut g = Graph::inference(store);
        let zv = g.constant(Tensor::from_f64(&[z.len() / dim, dim], z)?);
        let cond = match cloud {
            Some(c) => self.encode_condition(&mut g, c)?,
            None => None,
        };
        let v = self.forward(&mut g, zv, t, cond)?;
        Ok(g.value(v).to_f64_vec())
    }
}
