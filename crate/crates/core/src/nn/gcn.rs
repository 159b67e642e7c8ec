use rand::Rng;

use super::layers::{expect_width, Activation, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};

/// `D^{-1/2} (A + I) D^{-1/2}` for an undirected graph given as index pairs.
pub fn normalized_adjacency<T: Scalar>(n: usize, links: &[(usize, usize)]) -> Tensor<T> {
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(i, j) in links {
        if i != j {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        T::of(a[k] * inv_sqrt[i] * inv_sqrt[j])
    })
}

/// Graph convolution `act(Â X W + b)`.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub linear: Linear,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self {
            linear: Linear::new(store, rng, name, in_dim, out_dim, true),
            activation: Activation::Relu,
        }
    }

    /// `features: n × in`, `adjacency: n × n` already normalized.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, features: Var, adjacency: Var) -> Result<Var> {
        expect_width(g, features, self.linear.in_dim, "gcn")?;
        let n = g.shape(features)[0];
        let a = g.shape(adjacency);
        if a.len() != 2 || a[0] != a[1] || a[0] != n {
            return Err(Error::shape("gcn", format!("adjacency {a:?} does not match {n} nodes")));
        }
        let w = g.param(self.linear.weight);
        let xw = g.matmul(features, w)?;
        let mut h = g.matmul(adjacency, xw)?;
        if let Some(b) = self.linear.bias {
            let b = g.param(b);
            h = g.add(h, b)?;
        }
        Ok(self.activation.apply(g, h))
    }
}
