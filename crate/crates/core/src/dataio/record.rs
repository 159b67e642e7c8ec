use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{sample_cloud, CLOUD_POINTS};
use super::generator::{generate_with_normalization, Kind};
use crate::complex::{build_hasse_diagram, CellComplex, SpatialHasseDiagram};
use crate::error::{Error, Result};
use crate::geometry::vec3::{add, scale, Vec3};

/// Map from raw coordinates to normalized ones: `(x − center) · scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        [0, 1, 2].map(|k| ((p[k] - self.center[k]) * self.scale).clamp(-1.0, 1.0))
    }

    /// Compose: first `self`, then `next`.
    pub fn then(&self, next: &Normalization) -> Normalization {
        Normalization {
            center: add(self.center, scale(next.center, 1.0 / self.scale)),
            scale: self.scale * next.scale,
        }
    }
}

/// One model with its dense surface cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub complex: CellComplex,
    pub cloud: Vec<Vec3>,
    pub normalization: Normalization,
}

/// Seeded record: same `(kind, seed, wireframe)` gives a bit-identical record.
pub fn generate_record(kind: Kind, seed: u64, wireframe: bool) -> Result<DatasetRecord> {
    let (complex, normalization) = generate_with_normalization(kind, seed, wireframe)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC10D_5EED);
    let cloud = sample_cloud(&complex, CLOUD_POINTS, &mut rng);
    Ok(DatasetRecord {
        id: format!("{kind}-{seed}{}", if wireframe { "-wire" } else { "" }),
        complex,
        cloud,
        normalization,
    })
}

/// Generate `count` records cycling through `kinds`, seeded from `seed`.
pub fn generate_dataset(kinds: &[Kind], count: usize, seed: u64, wireframe: bool) -> Result<Vec<DatasetRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    use rayon::prelude::*;
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut r = generate_record(kinds[i % kinds.len()], s, wireframe)?;
            r.id = format!("{i:05}-{}", r.id);
            Ok(r)
        })
        .collect()
}

/// Re-center and rescale so the vertex bounding box has its longest side on `[-1, 1]`.
pub fn normalize_record(record: &mut DatasetRecord) -> Normalization {
    let c = &mut record.complex;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let extent_points = c
        .vertices
        .iter()
        .copied()
        .chain(c.edges.iter().flat_map(|e| e.curve.sample_uniform(9)));
    for p in extent_points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        return Normalization::identity();
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let n = Normalization {
        center: scale(add(lo, hi), 0.5),
        scale: if extent > 0.0 { 2.0 / extent } else { 1.0 },
    };
    for v in &mut c.vertices {
        *v = n.apply(*v);
    }
    for e in &mut c.edges {
        for p in &mut e.curve.ctrl {
            *p = n.apply(*p);
        }
    }
    for f in &mut c.faces {
        for p in &mut f.grid.points {
            *p = n.apply(*p);
        }
        f.frame.t = n.apply(f.frame.t);
    }
    for p in &mut record.cloud {
        *p = n.apply(*p);
    }
    record.normalization = record.normalization.then(&n);
    n
}

/// Indices into the original particles: the identity followed by uniformly
/// random duplicates up to `budget`.
pub fn pad_indices(true_count: usize, budget: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if true_count > budget {
        return Err(Error::OverBudget {
            count: true_count,
            budget,
        });
    }
    if true_count == 0 {
        return Err(Error::Empty("particle set to pad"));
    }
    let mut out: Vec<usize> = (0..true_count).collect();
    out.extend((true_count..budget).map(|_| rng.random_range(0..true_count)));
    Ok(out)
}

/// A normalized record with its diagram and the padded particle layout.
#[derive(Clone, Debug)]
pub struct PaddedSample {
    pub record: DatasetRecord,
    pub diagram: SpatialHasseDiagram,
    /// Length `budget`; entry `i` is the diagram node that slot `i` copies.
    pub source: Vec<usize>,
}

impl PaddedSample {
    pub fn true_count(&self) -> usize {
        self.diagram.len()
    }

    pub fn duplicates(&self) -> usize {
        self.source.len() - self.true_count()
    }

    /// Whether slot `i` is a copy rather than an original.
    pub fn is_duplicate(&self, i: usize) -> bool {
        i >= self.true_count()
    }
}

pub fn normalize_and_pad(record: &DatasetRecord, budget: usize, rng: &mut impl Rng) -> Result<PaddedSample> {
    let mut record = record.clone();
    let count = record.complex.cell_count();
    if count > budget {
        return Err(Error::OverBudget { count, budget });
    }
    normalize_record(&mut record);
    let diagram = build_hasse_diagram(&record.complex)?;
    let source = pad_indices(diagram.len(), budget, rng)?;
    Ok(PaddedSample {
        record,
        diagram,
        source,
    })
}
