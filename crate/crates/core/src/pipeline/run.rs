use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{FlowBundle, LatentRecord, VaeBundle};
use super::config::RunConfig;
use crate::assembly::{fit_and_assemble, BRepModel, FitConfig, ValidityConfig};
use crate::ccvae::{decode_latents, encode_mean, Decoded, KnownCells, VaeLossReport, VaeSample, VaeTrainer};
use crate::complex::{build_hasse_diagram, CellComplex, CellType, Mode};
use crate::dataio::{normalize_and_pad, normalize_record, sample_cloud, DatasetRecord};
use crate::error::{Error, Result};
use crate::flow::{
    cluster_inference_particles, median_nn_distance, sample_latents, FlowLossReport, FlowSample, FlowTrainer, Inpaint,
    LatentSet, LatentStats, SampleOptions,
};
use crate::geometry::distance::chamfer_distance;
use crate::geometry::Vec3;
use crate::metrics::METRIC_POINTS;

/// Per-record seed derived from a run seed.
pub fn record_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Padded training samples; records over budget are skipped and counted.
pub fn prepare_samples(records: &[DatasetRecord], budget: usize, seed: u64) -> Result<(Vec<VaeSample>, usize)> {
    let out: Vec<Result<Option<VaeSample>>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed(seed, i));
            match normalize_and_pad(r, budget, &mut rng) {
                Ok(p) => VaeSample::from_padded(&p).map(Some),
                Err(Error::OverBudget { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut samples = Vec::new();
    let mut skipped = 0;
    for s in out {
        match s? {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    Ok((samples, skipped))
}

/// Shuffled epochs of indices, cut into batches.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Train the VAE on padded samples, reporting every step to `log`.
pub fn train_vae(config: &RunConfig, samples: &[VaeSample], mut log: impl FnMut(&VaeLossReport)) -> Result<VaeBundle> {
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    let s = &config.vae_train;
    let mut trainer = VaeTrainer::<f32>::new(config.vae.clone(), s.optimizer(), config.seed)?;
    let mut batcher = Batcher::new(samples.len(), config.seed ^ 0xBA7C);
    for _ in 0..s.steps {
        let batch: Vec<VaeSample> = batcher
            .next(s.batch_size)
            .into_iter()
            .map(|i| samples[i].clone())
            .collect();
        let report = trainer.train_step(&batch)?;
        log(&report);
    }
    Ok(VaeBundle {
        model: trainer.model,
        store: trainer.store,
        budget: config.data.budget,
        mode: samples[0].mode,
    })
}

/// Unpadded sample of a record in its normalized frame.
pub fn unpadded_sample(record: &DatasetRecord) -> Result<(DatasetRecord, VaeSample)> {
    let mut record = record.clone();
    normalize_record(&mut record);
    let diagram = build_hasse_diagram(&record.complex)?;
    let sample = VaeSample::unpadded(&record, &diagram)?;
    Ok((record, sample))
}

/// Whether the thresholded links and the types equal the ground truth row by row.
pub fn topology_matches(decoded: &Decoded, sample: &VaeSample) -> bool {
    let n = sample.types.len();
    if decoded.types != sample.types {
        return false;
    }
    let truth: HashSet<(usize, usize)> = sample.links.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut predicted = HashSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if decoded.probs[i * n + j] >= crate::complex::LINK_THRESHOLD {
                predicted.insert((i, j));
            }
        }
    }
    predicted == truth
}

/// Dense surface samples of a complex, seeded.
pub fn complex_cloud(c: &CellComplex, seed: u64) -> Vec<Vec3> {
    sample_cloud(c, METRIC_POINTS, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Outcome of encoding and decoding one record.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub id: String,
    pub exact_topology: bool,
    pub chamfer: f64,
    pub model: BRepModel,
}

/// Encode with the posterior mean, decode and assemble.
pub fn reconstruct(
    vae: &VaeBundle,
    record: &DatasetRecord,
    fit: &FitConfig,
    validity: &ValidityConfig,
) -> Result<Reconstruction> {
    let (normalized, sample) = unpadded_sample(record)?;
    let mu = encode_mean(&vae.model, &vae.store, &sample)?;
    let decoded = decode_latents(&vae.model, &vae.store, &mu, sample.mode, None)?;
    let exact_topology = topology_matches(&decoded, &sample);
    let model = fit_and_assemble(&decoded.complex, fit, validity);
    let chamfer = if model.complex.vertices.is_empty() {
        f64::INFINITY
    } else {
        chamfer_distance(
            &complex_cloud(&model.complex, 1),
            &complex_cloud(&normalized.complex, 2),
        )?
    };
    Ok(Reconstruction {
        id: record.id.clone(),
        exact_topology,
        chamfer,
        model,
    })
}

/// Aggregate reconstruction quality.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub count: usize,
    /// Fraction with exact types and links.
    pub exact_topology: f64,
    /// Fraction with exact topology and Chamfer within the bound.
    pub faithful: f64,
    pub valid: f64,
    pub mean_chamfer: f64,
    pub median_chamfer: f64,
    pub chamfer_bound: f64,
}

impl ReconstructionReport {
    pub fn from_results(results: &[Reconstruction], bound: f64) -> Self {
        let n = results.len().max(1) as f64;
        let mut ch: Vec<f64> = results.iter().map(|r| r.chamfer).collect();
        ch.sort_by(f64::total_cmp);
        let finite: Vec<f64> = ch.iter().copied().filter(|c| c.is_finite()).collect();
        Self {
            count: results.len(),
            exact_topology: results.iter().filter(|r| r.exact_topology).count() as f64 / n,
            faithful: results
                .iter()
                .filter(|r| r.exact_topology && r.chamfer <= bound)
                .count() as f64
                / n,
            valid: results.iter().filter(|r| r.model.is_valid()).count() as f64 / n,
            mean_chamfer: if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            median_chamfer: ch.get(ch.len() / 2).copied().unwrap_or(f64::INFINITY),
            chamfer_bound: bound,
        }
    }
}

/// Posterior means of padded particle layouts, one latent set per record.
pub fn encode_records(vae: &VaeBundle, records: &[DatasetRecord], seed: u64) -> Result<Vec<LatentRecord>> {
    let out: Vec<Result<Option<LatentRecord>>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed(seed, i));
            let padded = match normalize_and_pad(r, vae.budget, &mut rng) {
                Ok(p) => p,
                Err(Error::OverBudget { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let sample = VaeSample::from_padded(&padded)?;
            let mu = encode_mean(&vae.model, &vae.store, &sample)?;
            let d = vae.model.config.latent_dim;
            let values = padded
                .source
                .iter()
                .flat_map(|&s| mu[s * d..(s + 1) * d].iter().copied())
                .collect();
            let mut latents = LatentSet::new(padded.source.len(), d, values)?;
            latents.sources = Some(padded.source.clone());
            Ok(Some(LatentRecord {
                id: r.id.clone(),
                latents,
            }))
        })
        .collect();
    out.into_iter().filter_map(|r| r.transpose()).collect()
}

/// Train the flow on encoded latents; the bundle carries the EMA weights.
pub fn train_flow(
    config: &RunConfig,
    latents: &[LatentRecord],
    mut log: impl FnMut(&FlowLossReport),
) -> Result<FlowBundle> {
    let sets: Vec<LatentSet> = latents.iter().map(|r| r.latents.clone()).collect();
    let stats = LatentStats::fit(&sets)?;
    let median = median_nn_distance(&sets).ok_or(Error::Empty("distinct latent rows"))?;
    let tau = config.sample.tau.unwrap_or(config.sample.tau_scale * median);
    let samples: Vec<FlowSample> = sets
        .iter()
        .map(|s| {
            let mut z = s.clone();
            z.values = stats.standardize(&s.values);
            FlowSample {
                latents: z,
                cloud: None,
            }
        })
        .collect();
    let budget = sets.iter().map(|s| s.rows).max().unwrap_or(config.data.budget);
    let s = &config.flow_train;
    let mut trainer = FlowTrainer::<f32>::new(
        config.flow.clone(),
        s.optimizer(),
        config.flow_schedule.clone(),
        config.seed,
    )?;
    let mut batcher = Batcher::new(samples.len(), config.seed ^ 0xF10A);
    for _ in 0..s.steps {
        let batch: Vec<FlowSample> = batcher
            .next(s.batch_size)
            .into_iter()
            .map(|i| samples[i].clone())
            .collect();
        let report = trainer.train_step(&batch)?;
        log(&report);
    }
    Ok(FlowBundle {
        model: trainer.model,
        store: trainer.ema.shadow,
        stats,
        tau,
        budget,
    })
}

/// One generated model with its intermediate products.
#[derive(Clone, Debug)]
pub struct Generated {
    pub particles: usize,
    pub clusters: usize,
    pub decoded: Decoded,
    pub model: BRepModel,
}

/// Generation settings resolved against the bundles.
#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub particles: usize,
    pub steps: usize,
    pub tau: f64,
    pub mode: Mode,
    pub fit: FitConfig,
    pub validity: ValidityConfig,
}

impl GenerateOptions {
    pub fn resolve(config: &RunConfig, vae: &VaeBundle, flow: &FlowBundle) -> Self {
        Self {
            particles: if config.sample.particles == 0 {
                flow.budget
            } else {
                config.sample.particles
            },
            steps: config.sample.steps,
            tau: config.sample.tau.unwrap_or(flow.tau),
            mode: vae.mode,
            fit: config.fit.clone(),
            validity: config.validity.clone(),
        }
    }
}

/// Sample latents, merge duplicates, decode and assemble.
pub fn generate(
    vae: &VaeBundle,
    flow: &FlowBundle,
    options: &GenerateOptions,
    rng: &mut impl Rng,
) -> Result<Generated> {
    let sample = SampleOptions {
        steps: options.steps,
        particles: options.particles,
        cloud: None,
        inpaint: None,
    };
    let z = sample_latents(&flow.model, &flow.store, &sample, rng)?;
    let raw = flow.stats.restore(&z.values);
    let clusters = cluster_inference_particles(&raw, z.dim, options.tau)?;
    let decoded = decode_latents(&vae.model, &vae.store, &clusters.representatives, options.mode, None)?;
    let model = fit_and_assemble(&decoded.complex, &options.fit, &options.validity);
    Ok(Generated {
        particles: options.particles,
        clusters: clusters.count,
        decoded,
        model,
    })
}

/// `count` models, each from its own seed derived from `seed`.
pub fn generate_many(
    vae: &VaeBundle,
    flow: &FlowBundle,
    options: &GenerateOptions,
    count: usize,
    seed: u64,
) -> Vec<Result<Generated>> {
    (0..count)
        .into_par_iter()
        .map(|i| generate(vae, flow, options, &mut ChaCha8Rng::seed_from_u64(record_seed(seed, i))))
        .collect()
}

/// Cell types whose latents are held fixed during in-painting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixSet {
    pub vertices: bool,
    pub edges: bool,
}

impl FixSet {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut fix = Self {
            vertices: false,
            edges: false,
        };
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match part {
                "vertices" | "vertex" => fix.vertices = true,
                "edges" | "edge" => fix.edges = true,
                other => {
                    return Err(Error::Config(format!(
                        "cannot fix `{other}`; use vertices and/or edges"
                    )))
                }
            }
        }
        if !fix.vertices && !fix.edges {
            return Err(Error::Config("nothing to fix".into()));
        }
        Ok(fix)
    }

    fn holds(&self, t: CellType) -> bool {
        match t {
            CellType::Vertex => self.vertices,
            CellType::Edge => self.edges,
            CellType::Face => false,
        }
    }
}

/// In-painted model and whether its fixed cells survived unchanged.
#[derive(Clone, Debug)]
pub struct Inpainted {
    pub id: String,
    pub model: BRepModel,
    pub wireframe_identical: bool,
    pub clusters: usize,
}

/// Regenerate the unfixed cells of `record` around its fixed vertex and edge latents.
///
/// Free rows are decoded as faces; fixed cells keep their exact positions,
/// curves and mutual links, and assembly leaves curves untouched.
pub fn inpaint(
    vae: &VaeBundle,
    flow: &FlowBundle,
    record: &DatasetRecord,
    fix: FixSet,
    options: &GenerateOptions,
    rng: &mut impl Rng,
) -> Result<Inpainted> {
    let (normalized, sample) = unpadded_sample(record)?;
    let d = vae.model.config.latent_dim;
    let mu = encode_mean(&vae.model, &vae.store, &sample)?;
    let fixed: Vec<usize> = (0..sample.types.len())
        .filter(|&r| fix.holds(sample.types[r]))
        .collect();
    let k = fixed.len();
    if k >= options.particles {
        return Err(Error::OverBudget {
            count: k,
            budget: options.particles,
        });
    }
    let mut known_rows = vec![0.0; options.particles * d];
    for (row, &node) in fixed.iter().enumerate() {
        known_rows[row * d..(row + 1) * d].copy_from_slice(&mu[node * d..(node + 1) * d]);
    }
    let ip = Inpaint {
        mask: (0..options.particles).map(|r| r < k).collect(),
        z1: flow.stats.standardize(&known_rows),
    };
    let sample_options = SampleOptions {
        steps: options.steps,
        particles: options.particles,
        cloud: None,
        inpaint: Some(&ip),
    };
    let z = sample_latents(&flow.model, &flow.store, &sample_options, rng)?;
    let raw = flow.stats.restore(&z.values);
    let clusters = cluster_inference_particles(&raw[k * d..], d, options.tau)?;
    let mut latents = known_rows[..k * d].to_vec();
    latents.extend_from_slice(&clusters.representatives);

    let row_of: HashMap<usize, usize> = fixed.iter().enumerate().map(|(row, &node)| (node, row)).collect();
    let c = &normalized.complex;
    let nv = c.vertices.len();
    let mut known = KnownCells {
        free_type: Some(CellType::Face),
        ..KnownCells::default()
    };
    for (&node, &row) in &row_of {
        known.types.insert(row, sample.types[node]);
        known.anchors.insert(row, sample.anchors[node]);
        if sample.types[node] == CellType::Edge {
            known.curves.insert(row, c.edges[node - nv].curve.clone());
        }
    }
    for &(a, b) in &sample.links {
        if let (Some(&ra), Some(&rb)) = (row_of.get(&a), row_of.get(&b)) {
            known.links.push((ra, rb));
        }
    }
    let decoded = decode_latents(&vae.model, &vae.store, &latents, Mode::Solid, Some(&known))?;
    let fit = FitConfig {
        snap_lines: false,
        ..options.fit.clone()
    };
    let model = fit_and_assemble(&decoded.complex, &fit, &options.validity);
    Ok(Inpainted {
        id: record.id.clone(),
        wireframe_identical: wireframe_identical(&model.complex, c),
        model,
        clusters: clusters.count,
    })
}

fn bits(p: &Vec3) -> [u64; 3] {
    p.map(f64::to_bits)
}

/// Vertices and edge curves as bit patterns, independent of cell order and curve direction.
fn wireframe_key(c: &CellComplex) -> (Vec<[u64; 3]>, Vec<Vec<u64>>) {
    let mut vertices: Vec<[u64; 3]> = c.vertices.iter().map(bits).collect();
    vertices.sort_unstable();
    let mut edges: Vec<Vec<u64>> = c
        .edges
        .iter()
        .map(|e| {
            let curve = &e.curve;
            let forward: Vec<u64> = curve
                .ctrl
                .iter()
                .flat_map(bits)
                .chain(curve.weights.iter().map(|w| w.to_bits()))
                .collect();
            let r = curve.reversed();
            let backward: Vec<u64> = r
                .ctrl
                .iter()
                .flat_map(bits)
                .chain(r.weights.iter().map(|w| w.to_bits()))
                .collect();
            forward.min(backward)
        })
        .collect();
    edges.sort_unstable();
    (vertices, edges)
}

/// Same vertex positions and edge curves bit for bit, up to order and direction.
pub fn wireframe_identical(a: &CellComplex, b: &CellComplex) -> bool {
    wireframe_key(a) == wireframe_key(b)
}
