//! Distribution, diversity and CAD-quality metrics over generated models.

mod report;

use rayon::prelude::*;

use crate::complex::{CellComplex, UnionFind};
use crate::error::{Error, Result};
use crate::geometry::distance::chamfer_with_index;
use crate::geometry::{PointIndex, Vec3};

pub use report::{EvalReport, MinKRow};

/// Points per model for distribution metrics.
pub const METRIC_POINTS: usize = 2000;
pub const JSD_RESOLUTION: usize = 28;
pub const DEFAULT_NOVELTY_THRESHOLD: f64 = 0.03;
pub const DEFAULT_UNIQUENESS_THRESHOLD: f64 = 0.015;

fn indices(clouds: &[Vec<Vec3>]) -> Result<Vec<PointIndex>> {
    clouds.par_iter().map(|c| PointIndex::new(c)).collect()
}

/// Row-major `a.len() × b.len()` matrix of Chamfer distances.
pub fn chamfer_matrix(a: &[Vec<Vec3>], b: &[Vec<Vec3>]) -> Result<Vec<f64>> {
    let (ia, ib) = (indices(a)?, indices(b)?);
    let nb = b.len();
    Ok((0..a.len() * nb)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / nb, k % nb);
            chamfer_with_index(&a[i], &ia[i], &b[j], &ib[j])
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistributionMetrics {
    /// Mean over references of the distance to the closest generated model.
    pub mmd: f64,
    /// Percentage of references that are the nearest reference of some generated model.
    pub cov: f64,
    /// Leave-one-out 1-nearest-neighbour accuracy on the union, in percent.
    pub one_nna: f64,
}

/// Distribution metrics from precomputed Chamfer matrices.
///
/// Ties are resolved without reference to list order: every reference tied
/// for nearest counts as covered, and a 1-NN query with tied neighbours of
/// both labels scores the fraction of tied neighbours sharing its label.
pub fn distribution_metrics_from(
    gen_ref: &[f64],
    gen_gen: &[f64],
    ref_ref: &[f64],
    n_gen: usize,
    n_ref: usize,
) -> Result<DistributionMetrics> {
    if n_gen == 0 || n_ref == 0 {
        return Err(Error::Empty("generated or reference set"));
    }
    let gr = |g: usize, r: usize| gen_ref[g * n_ref + r];
    let mmd = (0..n_ref)
        .map(|r| (0..n_gen).map(|g| gr(g, r)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / n_ref as f64;
    let mut covered = vec![false; n_ref];
    for g in 0..n_gen {
        let best = (0..n_ref).map(|r| gr(g, r)).fold(f64::INFINITY, f64::min);
        for (r, c) in covered.iter_mut().enumerate() {
            if gr(g, r) == best {
                *c = true;
            }
        }
    }
    let cov = 100.0 * covered.iter().filter(|&&c| c).count() as f64 / n_ref as f64;

    let n = n_gen + n_ref;
    // Distance between union members; gen first, then ref.
    let d = |i: usize, j: usize| match (i < n_gen, j < n_gen) {
        (true, true) => gen_gen[i * n_gen + j],
        (true, false) => gr(i, j - n_gen),
        (false, true) => gr(j, i - n_gen),
        (false, false) => ref_ref[(i - n_gen) * n_ref + (j - n_gen)],
    };
    let mut correct = 0.0;
    for i in 0..n {
        let best = (0..n)
            .filter(|&j| j != i)
            .map(|j| d(i, j))
            .fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = (0..n).filter(|&j| j != i && d(i, j) == best).collect();
        if tied.is_empty() {
            continue;
        }
        let same = tied.iter().filter(|&&j| (j < n_gen) == (i < n_gen)).count();
        correct += same as f64 / tied.len() as f64;
    }
    Ok(DistributionMetrics {
        mmd,
        cov,
        one_nna: 100.0 * correct / n as f64,
    })
}

pub fn distribution_metrics(gen: &[Vec<Vec3>], reference: &[Vec<Vec3>]) -> Result<DistributionMetrics> {
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::Empty("generated or reference set"));
    }
    let gen_ref = chamfer_matrix(gen, reference)?;
    let gen_gen = chamfer_matrix(gen, gen)?;
    let ref_ref = chamfer_matrix(reference, reference)?;
    distribution_metrics_from(&gen_ref, &gen_gen, &ref_ref, gen.len(), reference.len())
}

/// Voxel occupancy of the pooled clouds, normalized to a distribution.
pub fn voxel_distribution(clouds: &[Vec<Vec3>], resolution: usize) -> Vec<f64> {
    let mut counts = vec![0.0; resolution.pow(3)];
    let cell =
        |x: f64| (((x + 1.0) * 0.5 * resolution as f64).floor() as isize).clamp(0, resolution as isize - 1) as usize;
    let mut total = 0.0;
    for p in clouds.iter().flatten() {
        counts[(cell(p[0]) * resolution + cell(p[1])) * resolution + cell(p[2])] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

/// Jensen-Shannon divergence with natural logarithms; at most `ln 2`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |a: f64, b: f64| if a > 0.0 { a * (2.0 * a / (a + b)).ln() } else { 0.0 };
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| kl_to_mid(a, b) + kl_to_mid(b, a))
        .sum::<f64>()
}

pub fn jsd_voxel(gen: &[Vec<Vec3>], reference: &[Vec<Vec3>], resolution: usize) -> f64 {
    jensen_shannon(
        &voxel_distribution(gen, resolution),
        &voxel_distribution(reference, resolution),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diversity {
    pub novelty: f64,
    pub uniqueness: f64,
}

/// Novelty: generated models farther than `tau_n` from every training model.
/// Uniqueness: generated models with no other generated model within `tau_u`.
pub fn novelty_uniqueness_from(
    gen_train: &[f64],
    gen_gen: &[f64],
    n_gen: usize,
    n_train: usize,
    tau_n: f64,
    tau_u: f64,
) -> Diversity {
    if n_gen == 0 {
        return Diversity {
            novelty: 0.0,
            uniqueness: 0.0,
        };
    }
    let novel = (0..n_gen)
        .filter(|&g| (0..n_train).all(|t| gen_train[g * n_train + t] > tau_n))
        .count();
    let unique = (0..n_gen)
        .filter(|&g| (0..n_gen).all(|h| h == g || gen_gen[g * n_gen + h] > tau_u))
        .count();
    Diversity {
        novelty: 100.0 * novel as f64 / n_gen as f64,
        uniqueness: 100.0 * unique as f64 / n_gen as f64,
    }
}

pub fn novelty_uniqueness(gen: &[Vec<Vec3>], train: &[Vec<Vec3>], tau_n: f64, tau_u: f64) -> Result<Diversity> {
    let gt = chamfer_matrix(gen, train)?;
    let gg = chamfer_matrix(gen, gen)?;
    Ok(novelty_uniqueness_from(&gt, &gg, gen.len(), train.len(), tau_n, tau_u))
}

/// `E − V + 2P` on the vertex-edge graph, `P` its connected components.
pub fn cyclomatic_complexity(c: &CellComplex) -> f64 {
    let nv = c.vertices.len();
    let mut uf = UnionFind::new(nv);
    for e in &c.edges {
        if e.v.iter().all(|&v| v < nv) {
            uf.union(e.v[0], e.v[1]);
        }
    }
    c.edges.len() as f64 - nv as f64 + 2.0 * uf.components() as f64
}

/// What the CAD metrics need from one generated model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSummary {
    pub valid: bool,
    pub faces: usize,
    pub cyclomatic: f64,
}

impl ModelSummary {
    pub fn of(c: &CellComplex, valid: bool) -> Self {
        Self {
            valid,
            faces: c.faces.len(),
            cyclomatic: cyclomatic_complexity(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CadMetrics {
    pub valid: f64,
    /// `(k, valid % among models with at least k faces)` for `k = 1..=15`;
    /// `None` when no model has that many faces.
    pub min_k: Vec<(usize, Option<f64>)>,
    /// Mean over valid models; zero when none is valid.
    pub cc: f64,
}

pub fn cad_metrics(models: &[ModelSummary]) -> CadMetrics {
    let pct = |subset: &[&ModelSummary]| {
        (!subset.is_empty()).then(|| 100.0 * subset.iter().filter(|m| m.valid).count() as f64 / subset.len() as f64)
    };
    let all: Vec<&ModelSummary> = models.iter().collect();
    let min_k = (1..=15)
        .map(|k| {
            let subset: Vec<&ModelSummary> = models.iter().filter(|m| m.faces >= k).collect();
            (k, pct(&subset))
        })
        .collect();
    let valid: Vec<f64> = models.iter().filter(|m| m.valid).map(|m| m.cyclomatic).collect();
    CadMetrics {
        valid: pct(&all).unwrap_or(0.0),
        min_k,
        cc: if valid.is_empty() {
            0.0
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        },
    }
}
