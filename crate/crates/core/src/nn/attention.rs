use rand::Rng;

use super::layers::{expect_width, Linear, RmsNorm, SwiGlu};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Scalar, Var};

/// Logit assigned to padded keys; underflows to an exact zero weight.
pub(crate) const MASKED_LOGIT: f64 = -1e9;

/// Multi-head scaled dot-product attention without positional terms, so the
/// result is invariant to key/value order and equivariant to query order.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        dim: usize,
        heads: usize,
    ) -> Self {
        assert!(
            dim.is_multiple_of(heads),
            "model dim {dim} not divisible by {heads} heads"
        );
        Self {
            query: Linear::new(store, rng, &format!("{name}.q"), q_dim, dim, false),
            key: Linear::new(store, rng, &format!("{name}.k"), kv_dim, dim, false),
            value: Linear::new(store, rng, &format!("{name}.v"), kv_dim, dim, false),
            output: Linear::new(store, rng, &format!("{name}.o"), dim, dim, false),
            heads,
            dim,
        }
    }

    /// `key_padding[j] == true` excludes key `j` from every query.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        queries: Var,
        keys: Var,
        key_padding: Option<&[bool]>,
    ) -> Result<Var> {
        expect_width(g, queries, self.query.in_dim, "attention")?;
        expect_width(g, keys, self.key.in_dim, "attention")?;
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, keys)?;
        let v = self.value.forward(g, keys)?;
        let ctx = attend(g, q, k, v, self.heads, key_padding)?;
        self.output.forward(g, ctx)
    }
}

/// Core of multi-head attention on already projected `q: n×d`, `k, v: m×d`.
pub(crate) fn attend<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    key_padding: Option<&[bool]>,
) -> Result<Var> {
    let (n, d) = (g.shape(q)[0], g.shape(q)[1]);
    let m = g.shape(k)[0];
    if let Some(mask) = key_padding {
        if mask.len() != m {
            return Err(Error::shape(
                "attention",
                format!("mask has {} entries for {m} keys", mask.len()),
            ));
        }
    }
    let full_mask: Option<Vec<bool>> = key_padding.map(|mask| (0..n).flat_map(|_| mask.iter().copied()).collect());
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, 1, h * hd, hd)?,
                g.slice(k, 1, h * hd, hd)?,
                g.slice(v, 1, h * hd, hd)?,
            )
        };
        let s = g.matmul_t(qh, kh, false, true)?;
        let mut s = g.mul_scalar(s, scale);
        if let Some(mask) = &full_mask {
            s = g.masked_fill(s, mask, MASKED_LOGIT)?;
        }
        let a = g.softmax(s);
        outs.push(g.matmul(a, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat(&outs, 1)
    }
}

/// Pre-norm transformer layer: self-attention then gated feed-forward.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub norm_attn: RmsNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: RmsNorm,
    pub ffn: SwiGlu,
}

impl AttentionBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            norm_attn: RmsNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, dim, dim, heads),
            norm_ffn: RmsNorm::new(store, &format!("{name}.norm2"), dim),
            ffn: SwiGlu::new(store, rng, &format!("{name}.ffn"), dim),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, key_padding: Option<&[bool]>) -> Result<Var> {
        let h = self.norm_attn.forward(g, x)?;
        let a = self.attn.forward(g, h, h, key_padding)?;
        let x = g.add(x, a)?;
        let h = self.norm_ffn.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        g.add(x, f)
    }
}

/// Pre-norm cross-attention layer: queries attend to a separate token set.
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    pub norm_q: RmsNorm,
    pub norm_kv: RmsNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: RmsNorm,
    pub ffn: SwiGlu,
}

impl CrossAttentionBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
    ) -> Self {
        Self {
            norm_q: RmsNorm::new(store, &format!("{name}.norm_q"), dim),
            norm_kv: RmsNorm::new(store, &format!("{name}.norm_kv"), kv_dim),
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, kv_dim, dim, heads),
            norm_ffn: RmsNorm::new(store, &format!("{name}.norm2"), dim),
            ffn: SwiGlu::new(store, rng, &format!("{name}.ffn"), dim),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, q: Var, kv: Var) -> Result<Var> {
        let hq = self.norm_q.forward(g, q)?;
        let hkv = self.norm_kv.forward(g, kv)?;
        let a = self.attn.forward(g, hq, hkv, None)?;
        let x = g.add(q, a)?;
        let h = self.norm_ffn.forward(g, x)?;
        let f = self.ffn.forward(g, h)?;
        g.add(x, f)
    }
}
