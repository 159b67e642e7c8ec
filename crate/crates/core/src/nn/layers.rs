use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

pub(crate) fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Silu => g.silu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Affine map `x W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self::with_weight(store, name, uniform(rng, &[in_dim, out_dim], bound), bias)
    }

    /// All-zero weights and bias.
    pub fn zeros<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_weight(store, name, Tensor::zeros(&[in_dim, out_dim]), true)
    }

    fn with_weight<T: Scalar>(store: &mut ParamStore<T>, name: &str, w: Tensor<T>, bias: bool) -> Self {
        let (in_dim, out_dim) = (w.shape()[0], w.shape()[1]);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Stack of linear layers with an activation between (not after) them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        dims: &[usize],
        activation: Activation,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers, activation }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i < last {
                x = self.activation.apply(g, x);
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim
    }
}

/// Root-mean-square normalization over the last axis.
#[derive(Clone, Debug)]
pub struct RmsNorm {
    pub gain: Option<ParamId>,
    pub eps: f64,
}

impl RmsNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: Some(store.add(format!("{name}.gain"), Tensor::ones(&[dim]))),
            eps: 1e-6,
        }
    }

    /// Parameter-free variant, used under adaptive modulation.
    pub fn plain() -> Self {
        Self { gain: None, eps: 1e-6 }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        let rows = g.value(x).numel() / d;
        let sq = g.square(x);
        let ms = g.mean_axis(sq, shape.len() - 1)?;
        let ms = g.add_scalar(ms, self.eps);
        let inv = g.pow_scalar(ms, -0.5);
        let inv = g.reshape(inv, &[rows, 1])?;
        let inv = g.expand(inv, &[rows, d])?;
        let x2 = g.reshape(x, &[rows, d])?;
        let mut y = g.mul(x2, inv)?;
        if let Some(gain) = self.gain {
            let gain = g.param(gain);
            y = g.mul(y, gain)?;
        }
        g.reshape(y, &shape)
    }
}

/// Hidden width for the gated feed-forward: 8/3 of the model width rounded up to a multiple of 8.
pub fn swiglu_hidden(model_dim: usize) -> usize {
    let raw = (8 * model_dim).div_ceil(3);
    raw.div_ceil(8) * 8
}

/// Gated feed-forward `W2 (silu(x W1) * x W3)`.
#[derive(Clone, Debug)]
pub struct SwiGlu {
    pub gate: Linear,
    pub up: Linear,
    pub down: Linear,
}

impl SwiGlu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, dim: usize) -> Self {
        let hidden = swiglu_hidden(dim);
        Self {
            gate: Linear::new(store, rng, &format!("{name}.gate"), dim, hidden, false),
            up: Linear::new(store, rng, &format!("{name}.up"), dim, hidden, false),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, dim, false),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let a = self.gate.forward(g, x)?;
        let a = g.silu(a);
        let b = self.up.forward(g, x)?;
        let h = g.mul(a, b)?;
        self.down.forward(g, h)
    }
}

/// Lookup table indexed by row.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, count: usize, dim: usize) -> Self {
        Self {
            table: store.add(format!("{name}.table"), uniform(rng, &[count, dim], 1.0)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, indices: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather(t, indices)
    }
}

/// Shared per-element MLP followed by max-pooling over the set.
#[derive(Clone, Debug)]
pub struct PointNet {
    pub layers: Vec<Linear>,
}

impl PointNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, dims: &[usize]) -> Self {
        Self {
            layers: dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
                .collect(),
        }
    }

    /// `x: k × in` → `1 × out`, invariant to row order.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, x)?;
            x = g.relu(x);
        }
        let pooled = g.max_axis(x, 0)?;
        let d = g.shape(pooled)[0];
        g.reshape(pooled, &[1, d])
    }
}

/// Check a layer input is 2-D with the expected width.
pub(crate) fn expect_width<T: Scalar>(g: &Graph<T>, x: Var, width: usize, op: &'static str) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 2 || s[1] != width {
        return Err(Error::Shape {
            op,
            detail: format!("expected [*, {width}], got {s:?}"),
        });
    }
    Ok(())
}
