use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::VaeSample;
use crate::complex::{CellType, LPE_DIM};
use crate::error::{Error, Result};
use crate::geometry::bezier::raw_weight_for;
use crate::geometry::{
    bernstein, grid_uv, uniform_params, Frame, RationalCubicBezier, Vec3, CURVE_SAMPLES, WEIGHT_FLOOR,
};
use crate::nn::{
    fourier_dim, fourier_rows, normalized_adjacency, Activation, AttentionBlock, CrossAttentionBlock, Embedding,
    GcnLayer, Linear, Mlp, PointNet, RmsNorm,
};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};

/// Architecture and loss settings of the set VAE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub gcn_layers: usize,
    pub latent_dim: usize,
    pub type_embedding: usize,
    pub fourier_bands: usize,
    pub head_hidden: usize,
    pub pointnet_width: usize,
    /// Resolution of decoded face grids.
    pub surface_grid: usize,
    pub kl_weight: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            heads: 4,
            encoder_layers: 4,
            decoder_layers: 4,
            gcn_layers: 2,
            latent_dim: 16,
            type_embedding: 16,
            fourier_bands: 8,
            head_hidden: 128,
            pointnet_width: 64,
            surface_grid: 16,
            kl_weight: 2e-6,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl VaeConfig {
    /// Small configuration for tests and gradient checks.
    pub fn tiny() -> Self {
        Self {
            dim: 16,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            gcn_layers: 2,
            latent_dim: 4,
            type_embedding: 4,
            fourier_bands: 2,
            head_hidden: 16,
            pointnet_width: 8,
            surface_grid: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("latent_dim", self.latent_dim),
            ("type_embedding", self.type_embedding),
            ("head_hidden", self.head_hidden),
            ("pointnet_width", self.pointnet_width),
            ("fourier_bands", self.fourier_bands),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("vae.{name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "vae.dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.surface_grid < 2 {
            return Err(Error::Config("vae.surface_grid must be at least 2".into()));
        }
        if !(self.kl_weight >= 0.0) || !(self.focal_alpha > 0.0) || !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("vae loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outputs per curve: two interior offsets and two raw weights.
pub const EDGE_PARAMS: usize = 8;
/// Outputs per face pose: two rotation columns and a translation.
pub const POSE_PARAMS: usize = 9;

/// Compositional cell VAE; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CcVae {
    pub config: VaeConfig,
    query_proj: Linear,
    cloud_attn: CrossAttentionBlock,
    type_embed: Embedding,
    gcn: Vec<GcnLayer>,
    encoder: Vec<AttentionBlock>,
    encoder_norm: RmsNorm,
    to_latent: Linear,
    from_latent: Linear,
    decoder: Vec<AttentionBlock>,
    decoder_norm: RmsNorm,
    type_head: Mlp,
    anchor_head: Mlp,
    link_left: Linear,
    link_right: Linear,
    link_out: Mlp,
    edge_head: Mlp,
    pose_head: Mlp,
    boundary: PointNet,
    surface_uv: Linear,
    surface_face: Linear,
    surface_out: Mlp,
}

fn constant<T: Scalar>(g: &mut Graph<T>, shape: &[usize], data: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::from_f64(shape, data)?))
}

fn flat(points: &[Vec3]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

impl CcVae {
    pub fn new<T: Scalar>(config: VaeConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (d, h, f) = (c.dim, c.head_hidden, fourier_dim(c.fourier_bands));
        let gcn_in = d + 3 + c.type_embedding + LPE_DIM + 9;
        let gcn = (0..c.gcn_layers)
            .map(|i| {
                GcnLayer::new(
                    store,
                    rng,
                    &format!("vae.enc.gcn{i}"),
                    if i == 0 { gcn_in } else { d },
                    d,
                )
            })
            .collect();
        let encoder = (0..c.encoder_layers)
            .map(|i| AttentionBlock::new(store, rng, &format!("vae.enc.block{i}"), d, c.heads))
            .collect();
        let decoder = (0..c.decoder_layers)
            .map(|i| AttentionBlock::new(store, rng, &format!("vae.dec.block{i}"), d, c.heads))
            .collect();
        let model = Self {
            query_proj: Linear::new(store, rng, "vae.enc.query", f, d, true),
            cloud_attn: CrossAttentionBlock::new(store, rng, "vae.enc.cloud", d, f, c.heads),
            type_embed: Embedding::new(store, rng, "vae.enc.type", 3, c.type_embedding),
            gcn,
            encoder,
            encoder_norm: RmsNorm::new(store, "vae.enc.norm", d),
            to_latent: Linear::new(store, rng, "vae.enc.latent", d, 2 * c.latent_dim, true),
            from_latent: Linear::new(store, rng, "vae.dec.input", c.latent_dim, d, true),
            decoder,
            decoder_norm: RmsNorm::new(store, "vae.dec.norm", d),
            type_head: Mlp::new(store, rng, "vae.head.type", &[d, h, 3], Activation::Silu),
            anchor_head: Mlp::new(store, rng, "vae.head.anchor", &[d, h, 3], Activation::Silu),
            link_left: Linear::new(store, rng, "vae.head.link.left", d, h, true),
            link_right: Linear::new(store, rng, "vae.head.link.right", d, h, false),
            link_out: Mlp::new(store, rng, "vae.head.link.out", &[h, h, 1], Activation::Relu),
            edge_head: Mlp::new(
                store,
                rng,
                "vae.head.edge",
                &[3 * d, h, h, EDGE_PARAMS],
                Activation::Silu,
            ),
            pose_head: Mlp::new(store, rng, "vae.head.pose", &[d, h, POSE_PARAMS], Activation::Silu),
            boundary: PointNet::new(
                store,
                rng,
                "vae.head.boundary",
                &[3 + d, c.pointnet_width, c.pointnet_width],
            ),
            surface_uv: Linear::new(store, rng, "vae.head.surface.uv", 2, h, false),
            surface_face: Linear::new(store, rng, "vae.head.surface.face", d + c.pointnet_width, h, true),
            surface_out: Mlp::new(store, rng, "vae.head.surface.out", &[h, h, 3], Activation::Silu),
            config,
        };
        // Zero pose output reads as the identity rotation.
        if let Some(bias) = model.pose_head.layers.last().and_then(|l| l.bias) {
            let b = store.get_mut(bias).value_mut().data_mut();
            b[0] = T::one();
            b[4] = T::one();
        }
        Ok(model)
    }

    // ---- encoder ------------------------------------------------------------

    /// `(μ, logσ)`, one row per diagram node.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, s: &VaeSample) -> Result<(Var, Var)> {
        let c = &self.config;
        let n = s.true_count();
        let bands = c.fourier_bands;
        let fdim = fourier_dim(bands);
        if s.anchors.len() != n || s.rotations.len() != n || s.lpe.len() != n * LPE_DIM {
            return Err(Error::shape("encoder", "record and diagram sizes differ"));
        }
        let fq = constant(g, &[n, fdim], &fourier_rows(&s.anchors, bands))?;
        let q = self.query_proj.forward(g, fq)?;
        let local = if s.cloud.is_empty() {
            q
        } else {
            let kv = constant(g, &[s.cloud.len(), fdim], &fourier_rows(&s.cloud, bands))?;
            self.cloud_attn.forward(g, q, kv)?
        };
        let x = constant(g, &[n, 3], &flat(&s.anchors))?;
        let types: Vec<usize> = s.types.iter().map(|t| t.rank()).collect();
        let te = self.type_embed.forward(g, &types)?;
        let lpe = constant(g, &[n, LPE_DIM], &s.lpe)?;
        let rot: Vec<f64> = s.rotations.iter().flatten().copied().collect();
        let rot = constant(g, &[n, 9], &rot)?;
        let mut h = g.concat(&[local, x, te, lpe, rot], 1)?;
        let adj = g.constant(normalized_adjacency(n, &s.links));
        for layer in &self.gcn {
            h = layer.forward(g, h, adj)?;
        }
        for block in &self.encoder {
            h = block.forward(g, h, None)?;
        }
        let h = self.encoder_norm.forward(g, h)?;
        let out = self.to_latent.forward(g, h)?;
        let parts = g.split_last(out, &[c.latent_dim, c.latent_dim])?;
        Ok((parts[0], parts[1]))
    }

    /// `z = μ + exp(logσ) ⊙ ε` with `ε` given row-major.
    pub fn reparameterize<T: Scalar>(&self, g: &mut Graph<T>, mu: Var, logsig: Var, eps: &[f64]) -> Result<Var> {
        let shape = g.shape(mu).to_vec();
        let e = constant(g, &shape, eps)?;
        let sigma = g.exp(logsig);
        let noise = g.mul(sigma, e)?;
        g.add(mu, noise)
    }

    // ---- decoder ------------------------------------------------------------

    /// Decoded features `z̃`, one row per latent row.
    pub fn decode_features<T: Scalar>(&self, g: &mut Graph<T>, z: Var) -> Result<Var> {
        let mut h = self.from_latent.forward(g, z)?;
        for block in &self.decoder {
            h = block.forward(g, h, None)?;
        }
        self.decoder_norm.forward(g, h)
    }

    /// One-vs-all type logits, `rows × 3`.
    pub fn type_logits<T: Scalar>(&self, g: &mut Graph<T>, zt: Var) -> Result<Var> {
        self.type_head.forward(g, zt)
    }

    pub fn anchors<T: Scalar>(&self, g: &mut Graph<T>, zt: Var) -> Result<Var> {
        self.anchor_head.forward(g, zt)
    }

    /// Symmetric link logits for the given row pairs, shape `[pairs]`.
    pub fn link_logits<T: Scalar>(&self, g: &mut Graph<T>, zt: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        if pairs.is_empty() {
            return Err(Error::Empty("link pairs"));
        }
        let left = self.link_left.forward(g, zt)?;
        let right = self.link_right.forward(g, zt)?;
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let la = g.gather(left, &a)?;
        let rb = g.gather(right, &b)?;
        let lb = g.gather(left, &b)?;
        let ra = g.gather(right, &a)?;
        let ab = g.add(la, rb)?;
        let ab = g.relu(ab);
        let ba = g.add(lb, ra)?;
        let ba = g.relu(ba);
        let ab = self.link_out.forward(g, ab)?;
        let ba = self.link_out.forward(g, ba)?;
        let sum = g.add(ab, ba)?;
        let mean = g.mul_scalar(sum, 0.5);
        g.reshape(mean, &[pairs.len()])
    }

    /// Raw curve parameters for `(edge row, [u row, v row])`, `m × EDGE_PARAMS`.
    pub fn edge_params<T: Scalar>(&self, g: &mut Graph<T>, zt: Var, edges: &[(usize, [usize; 2])]) -> Result<Var> {
        let u: Vec<usize> = edges.iter().map(|e| e.1[0]).collect();
        let e: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let v: Vec<usize> = edges.iter().map(|e| e.1[1]).collect();
        let zu = g.gather(zt, &u)?;
        let ze = g.gather(zt, &e)?;
        let zv = g.gather(zt, &v)?;
        let x = g.concat(&[zu, ze, zv], 1)?;
        self.edge_head.forward(g, x)
    }

    /// Curve through `a` and `b` from one row of [`Self::edge_params`].
    ///
    /// Zero parameters give the uniformly parameterized segment.
    pub fn curve_from_params(params: &[f64], a: Vec3, b: Vec3) -> RationalCubicBezier {
        let third = |k: usize| (b[k] - a[k]) / 3.0;
        let d1 = [third(0) + params[0], third(1) + params[1], third(2) + params[2]];
        let d2 = [-third(0) + params[3], -third(1) + params[4], -third(2) + params[5]];
        let one = raw_weight_for(1.0);
        RationalCubicBezier::from_relative_params(a, b, d1, d2, [params[6] + one, params[7] + one])
    }

    /// Differentiable curve samples `m × CURVE_SAMPLES × 3` matching [`Self::curve_from_params`].
    pub fn curve_samples<T: Scalar>(&self, g: &mut Graph<T>, params: Var, ends: &[[Vec3; 2]]) -> Result<Var> {
        let m = ends.len();
        let s = CURVE_SAMPLES;
        let a: Vec<Vec3> = ends.iter().map(|e| e[0]).collect();
        let b: Vec<Vec3> = ends.iter().map(|e| e[1]).collect();
        let third: Vec<Vec3> = ends
            .iter()
            .map(|e| [0, 1, 2].map(|k| (e[1][k] - e[0][k]) / 3.0))
            .collect();
        let pa = constant(g, &[m, 3], &flat(&a))?;
        let pb = constant(g, &[m, 3], &flat(&b))?;
        let th = constant(g, &[m, 3], &flat(&third))?;
        let parts = g.split_last(params, &[3, 3, 1, 1])?;
        let p1 = g.add(pa, th)?;
        let p1 = g.add(p1, parts[0])?;
        let p2 = g.sub(pb, th)?;
        let p2 = g.add(p2, parts[1])?;
        let one = raw_weight_for(1.0);
        let weight = |g: &mut Graph<T>, raw: Var| -> Result<Var> {
            let r = g.add_scalar(raw, one);
            let w = g.softplus(r);
            let w = g.add_scalar(w, WEIGHT_FLOOR);
            g.expand(w, &[m, s])
        };
        let w1 = weight(g, parts[2])?;
        let w2 = weight(g, parts[3])?;
        let ts = uniform_params(s);
        let basis = |k: usize| -> Vec<f64> { ts.iter().map(|&t| bernstein(t)[k]).collect() };
        let bcols: Vec<Var> = (0..4).map(|k| constant(g, &[s], &basis(k))).collect::<Result<_>>()?;
        let tile = |k: usize| -> Vec<f64> { (0..m).flat_map(|_| basis(k)).collect() };
        let c0 = constant(g, &[m, s], &tile(0))?;
        let c1 = g.mul(w1, bcols[1])?;
        let c2 = g.mul(w2, bcols[2])?;
        let c3 = constant(g, &[m, s], &tile(3))?;
        let mut num: Option<Var> = None;
        let mut den: Option<Var> = None;
        for (c, p) in [(c0, pa), (c1, p1), (c2, p2), (c3, pb)] {
            let cw = g.reshape(c, &[m, s, 1])?;
            let cw = g.expand(cw, &[m, s, 3])?;
            let pp = g.reshape(p, &[m, 1, 3])?;
            let pp = g.expand(pp, &[m, s, 3])?;
            let term = g.mul(cw, pp)?;
            num = Some(match num {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
            den = Some(match den {
                Some(acc) => g.add(acc, c)?,
                None => c,
            });
        }
        let den = g.reshape(den.expect("four terms"), &[m, s, 1])?;
        let den = g.expand(den, &[m, s, 3])?;
        g.div(num.expect("four terms"), den)
    }

    /// Raw pose parameters for face rows, `m × POSE_PARAMS`.
    pub fn pose_params<T: Scalar>(&self, g: &mut Graph<T>, zt: Var, faces: &[usize]) -> Result<Var> {
        let zf = g.gather(zt, faces)?;
        self.pose_head.forward(g, zf)
    }

    /// Orthonormal axes `[e1 | e2 | e3]` (`m × 9`) and translation (`m × 3`) by Gram–Schmidt.
    pub fn pose_axes<T: Scalar>(&self, g: &mut Graph<T>, params: Var) -> Result<(Var, Var)> {
        let m = g.shape(params)[0];
        let parts = g.split_last(params, &[3, 3, 3])?;
        let unit = |g: &mut Graph<T>, v: Var| -> Result<Var> {
            let sq = g.square(v);
            let n2 = g.sum_axis(sq, 1)?;
            let n2 = g.add_scalar(n2, 1e-12);
            let inv = g.pow_scalar(n2, -0.5);
            let inv = g.reshape(inv, &[m, 1])?;
            let inv = g.expand(inv, &[m, 3])?;
            g.mul(v, inv)
        };
        let e1 = unit(g, parts[0])?;
        let proj = g.mul(e1, parts[1])?;
        let proj = g.sum_axis(proj, 1)?;
        let proj = g.reshape(proj, &[m, 1])?;
        let proj = g.expand(proj, &[m, 3])?;
        let along = g.mul(proj, e1)?;
        let b2 = g.sub(parts[1], along)?;
        let e2 = unit(g, b2)?;
        let e3 = cross_rows(g, e1, e2)?;
        let axes = g.concat(&[e1, e2, e3], 1)?;
        Ok((axes, parts[2]))
    }

    /// Frame from one row of [`Self::pose_params`]; identity rotation if degenerate.
    pub fn frame_from_params(params: &[f64]) -> Frame {
        let t = [params[6], params[7], params[8]];
        Frame::from_6d([params[0], params[1], params[2]], [params[3], params[4], params[5]], t)
            .unwrap_or(Frame { t, ..Frame::identity() })
    }

    /// Decoded face samples, `(m · G²) × 3`, face-major.
    ///
    /// `faces[k] = (face row, child rows)`; children enter through the
    /// boundary encoder as `[T_f⁻¹(x_j), z̃_j]` using `frames[k]` and the
    /// per-row `anchors`.
    pub fn surface_points<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        zt: Var,
        faces: &[(usize, Vec<usize>)],
        frames: &[Frame],
        anchors: &[Vec3],
    ) -> Result<Var> {
        let m = faces.len();
        let gg = self.config.surface_grid * self.config.surface_grid;
        let mut child_rows = Vec::new();
        let mut local = Vec::new();
        let mut spans = Vec::with_capacity(m);
        for ((_, children), frame) in faces.iter().zip(frames) {
            if children.is_empty() {
                return Err(Error::shape("face head", "face without boundary children"));
            }
            spans.push((child_rows.len(), children.len()));
            for &j in children {
                child_rows.push(j);
                local.extend(frame.to_local(anchors[j]));
            }
        }
        let zc = g.gather(zt, &child_rows)?;
        let xl = constant(g, &[child_rows.len(), 3], &local)?;
        let mut h = g.concat(&[xl, zc], 1)?;
        for layer in &self.boundary.layers {
            h = layer.forward(g, h)?;
            h = g.relu(h);
        }
        let pooled: Vec<Var> = spans
            .iter()
            .map(|&(start, len)| {
                let part = g.slice(h, 0, start, len)?;
                let p = g.max_axis(part, 0)?;
                let w = g.shape(p)[0];
                g.reshape(p, &[1, w])
            })
            .collect::<Result<_>>()?;
        let hs = g.concat(&pooled, 0)?;
        let rows: Vec<usize> = faces.iter().map(|f| f.0).collect();
        let zf = g.gather(zt, &rows)?;
        let face_in = g.concat(&[zf, hs], 1)?;
        let face_h = self.surface_face.forward(g, face_in)?;
        let repeat: Vec<usize> = (0..m).flat_map(|k| std::iter::repeat_n(k, gg)).collect();
        let face_h = g.gather(face_h, &repeat)?;
        let uv: Vec<f64> = grid_uv(self.config.surface_grid).iter().flatten().copied().collect();
        let uv = constant(g, &[gg, 2], &uv)?;
        let uv_h = self.surface_uv.forward(g, uv)?;
        let uv_h = g.reshape(uv_h, &[1, gg, self.config.head_hidden])?;
        let uv_h = g.expand(uv_h, &[m, gg, self.config.head_hidden])?;
        let uv_h = g.reshape(uv_h, &[m * gg, self.config.head_hidden])?;
        let x = g.add(face_h, uv_h)?;
        let x = g.silu(x);
        let p = self.surface_out.forward(g, x)?;
        // World position: Σ_k p_k · axis_k + t, per face.
        let mut world = {
            let t: Vec<f64> = frames.iter().flat_map(|f| (0..gg).flat_map(move |_| f.t)).collect();
            constant(g, &[m * gg, 3], &t)?
        };
        for k in 0..3 {
            let axis: Vec<f64> = frames
                .iter()
                .flat_map(|f| (0..gg).flat_map(move |_| f.axis(k)))
                .collect();
            let axis = constant(g, &[m * gg, 3], &axis)?;
            let pk = g.slice(p, 1, k, 1)?;
            let pk = g.expand(pk, &[m * gg, 3])?;
            let term = g.mul(pk, axis)?;
            world = g.add(world, term)?;
        }
        Ok(world)
    }
}

/// Row-wise cross product of two `m × 3` variables.
fn cross_rows<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let ac: Vec<Var> = (0..3).map(|k| g.slice(a, 1, k, 1)).collect::<Result<_>>()?;
    let bc: Vec<Var> = (0..3).map(|k| g.slice(b, 1, k, 1)).collect::<Result<_>>()?;
    let mut comps = Vec::with_capacity(3);
    for k in 0..3 {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        let x = g.mul(ac[i], bc[j])?;
        let y = g.mul(ac[j], bc[i])?;
        comps.push(g.sub(x, y)?);
    }
    g.concat(&comps, 1)
}

/// Index of the largest of three logits; ties go to the lower rank.
pub fn argmax_type(logits: &[f64]) -> CellType {
    let mut best = 0;
    for k in 1..3 {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    CellType::from_rank(best).expect("rank below 3")
}
