use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Weight of the velocity direction term.
pub const DIRECTION_WEIGHT: f64 = 0.1;

/// Row-major `rows × dim` latent matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSet {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    /// Original row of every padded row; present for training sets only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<usize>>,
}

impl LatentSet {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::shape(
                "latent set",
                format!("{} values for {rows} x {dim}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                component: "latent set".into(),
            });
        }
        Ok(Self {
            rows,
            dim,
            values,
            sources: None,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Straight path point `t z1 + (1 − t) z0` and its velocity `z1 − z0`.
pub fn rf_interpolate_and_target(z0: &[f64], z1: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if z0.len() != z1.len() {
        return Err(Error::shape(
            "interpolate",
            format!("{} vs {} values", z0.len(), z1.len()),
        ));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::shape("interpolate", format!("time {t} outside [0, 1]")));
    }
    let zt = z0.iter().zip(z1).map(|(a, b)| t * b + (1.0 - t) * a).collect();
    let v = z0.iter().zip(z1).map(|(a, b)| b - a).collect();
    Ok((zt, v))
}

/// `sigmoid(m + s n)` with `n ~ N(0, 1)`, clamped strictly inside `(0, 1)`.
pub fn sample_t_logit_normal(rng: &mut impl Rng, m: f64, s: f64) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    let t = 1.0 / (1.0 + (-(m + s * n)).exp());
    t.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// `MSE(v, v*) + λ (1 − cos(v, v*))` over the flattened set; the direction
/// term is dropped when `‖v*‖ < 1e-8` or `‖v‖ < 1e-8`, where the cosine is
/// undefined (a zero-initialized output layer predicts exactly `v = 0`).
pub fn flow_loss<T: Scalar>(g: &mut Graph<T>, v_pred: Var, target: &[f64]) -> Result<Var> {
    let shape = g.shape(v_pred).to_vec();
    let t = g.constant(Tensor::from_f64(&shape, target)?);
    let d = g.sub(v_pred, t)?;
    let sq = g.square(d);
    let mse = g.mean(sq);
    let norm_t = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_p = g.value(v_pred).to_f64_vec().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_t < 1e-8 || norm_p < 1e-8 {
        return Ok(mse);
    }
    let dot = g.mul(v_pred, t)?;
    let dot = g.sum(dot);
    let p2 = g.square(v_pred);
    let p2 = g.sum(p2);
    let inv = g.pow_scalar(p2, -0.5);
    let cos = g.mul(dot, inv)?;
    let cos = g.mul_scalar(cos, 1.0 / norm_t);
    let dir = g.mul_scalar(cos, -DIRECTION_WEIGHT);
    let dir = g.add_scalar(dir, DIRECTION_WEIGHT);
    g.add(mse, dir)
}

/// Rows held on their known straight path during sampling.
#[derive(Clone, Debug)]
pub struct Inpaint {
    pub mask: Vec<bool>,
    /// Known data rows (`rows × dim`); only masked rows are read.
    pub z1: Vec<f64>,
}

/// Forward Euler from `z0` at `t = 0` to `t = 1` in `steps` steps.
///
/// After each step masked rows are reset to `t z1 + (1 − t) z0` using their
/// own starting noise.
pub fn euler_integrate(
    z0: &[f64],
    dim: usize,
    steps: usize,
    inpaint: Option<&Inpaint>,
    mut velocity: impl FnMut(&[f64], f64) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    if let Some(ip) = inpaint {
        if ip.mask.len() * dim != z0.len() || ip.z1.len() != z0.len() {
            return Err(Error::shape(
                "inpaint",
                "mask or known rows do not match the latent set",
            ));
        }
    }
    let h = 1.0 / steps as f64;
    let mut z = z0.to_vec();
    for k in 0..steps {
        let t = k as f64 * h;
        let v = velocity(&z, t)?;
        if v.len() != z.len() {
            return Err(Error::shape("sampler", "velocity does not match the latent set"));
        }
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi += h * vi;
        }
        if let Some(ip) = inpaint {
            let t1 = if k + 1 == steps { 1.0 } else { (k + 1) as f64 * h };
            for (r, _) in ip.mask.iter().enumerate().filter(|(_, m)| **m) {
                for c in r * dim..(r + 1) * dim {
                    z[c] = if t1 == 1.0 {
                        ip.z1[c]
                    } else {
                        t1 * ip.z1[c] + (1.0 - t1) * z0[c]
                    };
                }
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                component: "flow sampler trajectory".into(),
            });
        }
    }
    Ok(z)
}

/// Single-linkage clusters of latent rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Clusters {
    /// Cluster means, row-major `count × dim`.
    pub representatives: Vec<f64>,
    /// Cluster index of every input row; clusters are numbered by first row.
    pub assignment: Vec<usize>,
    pub count: usize,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Merge rows closer than `tau` transitively and average each cluster.
pub fn cluster_inference_particles(latents: &[f64], dim: usize, tau: f64) -> Result<Clusters> {
    if dim == 0 || !latents.len().is_multiple_of(dim) {
        return Err(Error::shape(
            "cluster",
            format!("{} values for width {dim}", latents.len()),
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("cluster threshold must be positive, got {tau}")));
    }
    let n = latents.len() / dim;
    let row = |i: usize| &latents[i * dim..(i + 1) * dim];
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            // Compare distances, not squares: `tau²` underflows for tiny `tau`.
            if sq_dist(row(i), row(j)).sqrt() < tau {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut assignment = vec![0; n];
    let mut count = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = count;
            count += 1;
        }
        assignment[i] = label[r];
    }
    // Means are accumulated as offsets from each cluster's first row so that
    // exact duplicates reproduce that row bit for bit.
    let mut first = vec![usize::MAX; count];
    let mut offsets = vec![0.0; count * dim];
    let mut sizes = vec![0usize; count];
    for i in 0..n {
        let c = assignment[i];
        if first[c] == usize::MAX {
            first[c] = i;
        }
        sizes[c] += 1;
        for ((o, v), b) in offsets[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(row(i))
            .zip(row(first[c]))
        {
            *o += v - b;
        }
    }
    let mut representatives = Vec::with_capacity(count * dim);
    for c in 0..count {
        let k = sizes[c] as f64;
        representatives.extend(
            row(first[c])
                .iter()
                .zip(&offsets[c * dim..(c + 1) * dim])
                .map(|(b, o)| b + o / k),
        );
    }
    Ok(Clusters {
        representatives,
        assignment,
        count,
    })
}

/// Median over all rows of the distance to the nearest distinct row of the same set.
///
/// Exact duplicates are skipped so padded copies do not pull the value to zero.
pub fn median_nn_distance(sets: &[LatentSet]) -> Option<f64> {
    let mut d = Vec::new();
    for s in sets {
        for i in 0..s.rows {
            let best = (0..s.rows)
                .filter(|&j| j != i)
                .map(|j| sq_dist(s.row(i), s.row(j)))
                .filter(|&v| v > 0.0)
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                d.push(best.sqrt());
            }
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

/// Per-dimension affine standardization of latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over the distinct rows of every set.
    pub fn fit(sets: &[LatentSet]) -> Result<Self> {
        let dim = sets.first().ok_or(Error::Empty("latent sets"))?.dim;
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0.0;
        for s in sets {
            if s.dim != dim {
                return Err(Error::shape("latent stats", "latent widths differ"));
            }
            for i in 0..s.rows {
                if s.sources.as_ref().is_some_and(|src| src[i] != i) {
                    continue;
                }
                for (k, v) in s.row(i).iter().enumerate() {
                    mean[k] += v;
                    sq[k] += v * v;
                }
                n += 1.0;
            }
        }
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= n;
                (s / n - *m * *m).max(0.0).sqrt().max(1e-6)
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect()
    }

    pub fn restore(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dim();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }
}
