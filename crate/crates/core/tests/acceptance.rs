//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria that need hours of CPU training (4, 5, 7, 8) only run when
//! `KCP_ACCEPTANCE_FULL=1`; otherwise their line reads `NOT RUN`.
//! Trained bundles are cached under `KCP_ACCEPTANCE_DIR` (default: a
//! `kcp-acceptance` directory in the system temp dir).

use std::path::PathBuf;
use std::time::Instant;

use kcp_core::assembly::{assemble, check_validity, Mutation, ValidityConfig};
use kcp_core::ccvae::{evaluate, CcVae, VaeConfig, VaeSample, VaeTrainer};
use kcp_core::complex::{build_hasse_diagram, flatten_to_particles, restore_complex, CellType, PredictedGeometry};
use kcp_core::dataio::{generate, generate_dataset, generate_record, normalize_and_pad, Kind};
use kcp_core::flow::{
    cluster_inference_particles, euler_integrate, sample_loss, sample_t_logit_normal, FlowBackbone, FlowConfig,
    FlowDraw, FlowSample, LatentSet,
};
use kcp_core::geometry::Vec3;
use kcp_core::metrics::{
    cyclomatic_complexity, distribution_metrics, jsd_voxel, novelty_uniqueness, voxel_distribution,
};
use kcp_core::nn::{
    normalized_adjacency, Activation, AdamWConfig, AttentionBlock, CrossAttentionBlock, Embedding, GcnLayer, Linear,
    Mlp, MultiHeadAttention, PointNet, RmsNorm, SwiGlu,
};
use kcp_core::pipeline::{
    encode_records, generate_many, inpaint, prepare_samples, reconstruct, train_flow, train_vae, FixSet, FlowBundle,
    GenerateOptions, ReconstructionReport, RunConfig, VaeBundle,
};
use kcp_core::tensor::{gradcheck_piecewise, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn full_run() -> bool {
    std::env::var("KCP_ACCEPTANCE_FULL").is_ok_and(|v| v == "1")
}

fn not_run() -> Outcome {
    Outcome::NotRun("needs hours of CPU training; set KCP_ACCEPTANCE_FULL=1".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient integrity", gradient_integrity),
        (2, "structural round-trip", structural_round_trip),
        (3, "counting oracles", counting_oracles),
        (4, "VAE overfit sanity", vae_overfit),
        (5, "desk-scale generalization", desk_generalization),
        (6, "flow correctness", flow_correctness),
        (7, "end-to-end generation", end_to_end_generation),
        (8, "in-painting", inpainting),
        (9, "metric oracles", metric_oracles),
        (10, "validity checker discrimination", validity_discrimination),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::NotRun(d) => ("NOT RUN", d),
        };
        println!("criterion {n:>2} {name:<32} {status:<7} {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Contract with fixed random weights so every output entry reaches the loss.
fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> kcp_core::Result<Var> {
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), g.shape(x));
    let w = g.constant(w);
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

/// Move every parameter off its initial value (zero biases, unit gains, zero-initialized gates).
fn jitter(store: &mut ParamStore<f64>, seed: u64, amount: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).value_mut().data_mut() {
            *v += rng.random_range(-amount..amount);
        }
    }
}

/// Half-step agreement required before a finite difference is trusted.
const SMOOTH_TOL: f64 = 1e-5;
/// Largest fraction of entries that may be excluded as unresolved.
const MAX_UNRESOLVED: f64 = 0.02;

struct Check {
    worst: f64,
    worst_at: String,
    unreachable: Vec<String>,
    entries: usize,
    unresolved: usize,
}

impl Check {
    fn run(&mut self, store: &mut ParamStore<f64>, what: &str, f: impl Fn(&mut Graph<f64>) -> kcp_core::Result<Var>) {
        let report = gradcheck_piecewise(store, 1e-5, Some(6), SMOOTH_TOL, f).unwrap_or_else(|e| panic!("{what}: {e}"));
        self.entries += report.entries();
        self.unresolved += report.unresolved();
        if report.max_rel_error > self.worst {
            self.worst = report.max_rel_error;
            let p = report
                .params
                .iter()
                .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
            self.worst_at = format!("{what}:{}", p.map_or("", |p| p.name.as_str()));
        }
        self.unreachable
            .extend(report.unreachable().map(|p| format!("{what}:{p}")));
    }
}

fn gradient_integrity() -> Outcome {
    let mut check = Check {
        worst: 0.0,
        worst_at: String::new(),
        unreachable: Vec::new(),
        entries: 0,
        unresolved: 0,
    };
    let kinds = [Kind::Prism(3), Kind::Pyramid(3), Kind::Box, Kind::Prism(4)];
    for config in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + config);
        let heads = rng.random_range(1..=2);
        let dim = heads * rng.random_range(2..=3);
        let (n, m, width) = (
            rng.random_range(2..=5),
            rng.random_range(2..=4),
            rng.random_range(2..=5),
        );
        let act = [Activation::Silu, Activation::Tanh][rng.random_range(0..2)];
        let x = random(&mut rng, &[n, dim]);
        let kv = random(&mut rng, &[m, width]);
        let mask: Vec<bool> = (0..m).map(|j| j > 0 && rng.random_bool(0.3)).collect();
        let links: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
        let adj = normalized_adjacency::<f64>(n, &links);

        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, &mut rng, "linear", dim, width, true);
        let mlp = Mlp::new(&mut store, &mut rng, "mlp", &[dim, width, dim], act);
        let norm = RmsNorm::new(&mut store, "norm", dim);
        let glu = SwiGlu::new(&mut store, &mut rng, "swiglu", dim);
        let emb = Embedding::new(&mut store, &mut rng, "embedding", 4, dim);
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", dim, width, dim, heads);
        let block = AttentionBlock::new(&mut store, &mut rng, "block", dim, heads);
        let cross = CrossAttentionBlock::new(&mut store, &mut rng, "cross", dim, width, heads);
        let gcn = GcnLayer::new(&mut store, &mut rng, "gcn", dim, dim);
        let pointnet = PointNet::new(&mut store, &mut rng, "pointnet", &[dim, width]);
        jitter(&mut store, config, 0.1);
        let ids: Vec<usize> = (0..n).map(|i| i % 4).collect();
        check.run(&mut store, "layers", |g| {
            let xv = g.constant(x.clone());
            let kvv = g.constant(kv.clone());
            let a = g.constant(adj.clone());
            let e = emb.forward(g, &ids)?;
            let h = g.add(xv, e)?;
            let h = norm.forward(g, h)?;
            let h = mlp.forward(g, h)?;
            let h = glu.forward(g, h)?;
            let att = mha.forward(g, h, kvv, Some(&mask))?;
            let h = g.add(h, att)?;
            let h = block.forward(g, h, None)?;
            let h = cross.forward(g, h, kvv)?;
            let h = gcn.forward(g, h, a)?;
            let p = pointnet.forward(g, h)?;
            let l = lin.forward(g, h)?;
            let a = weighted_sum(g, p, config)?;
            let b = weighted_sum(g, l, config + 1)?;
            g.add(a, b)
        });

        // Composite VAE loss: type focal, anchors, links, edges, faces, pose and KL terms.
        let vae_config = VaeConfig {
            latent_dim: rng.random_range(2..=4),
            dim: 8 * rng.random_range(1..=2),
            ..VaeConfig::tiny()
        };
        let mut store = ParamStore::new();
        let model = CcVae::new(vae_config.clone(), &mut store, &mut rng).unwrap();
        jitter(&mut store, config + 50, 0.05);
        let mut record = generate_record(kinds[config as usize % kinds.len()], config, false).unwrap();
        record.cloud.truncate(8);
        let padded = normalize_and_pad(&record, 2 * record.complex.cell_count(), &mut rng).unwrap();
        let sample = VaeSample::from_padded(&padded).unwrap();
        let eps: Vec<f64> = (0..sample.true_count() * vae_config.latent_dim)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        check.run(&mut store, "vae loss", |g| {
            Ok(model.losses(g, &sample, Some(&eps), 2e-6)?.total)
        });

        // Composite flow loss, alternating unconditional and cloud-conditioned backbones.
        let flow_config = FlowConfig {
            condition_tokens: if config % 2 == 0 { 0 } else { 3 },
            latent_dim: rng.random_range(2..=4),
            ..FlowConfig::tiny()
        };
        let mut store = ParamStore::new();
        let flow = FlowBackbone::new(flow_config.clone(), &mut store, &mut rng).unwrap();
        jitter(&mut store, config + 100, 0.2);
        let rows = rng.random_range(3..=6);
        let d = flow_config.latent_dim;
        let values: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let flow_sample = FlowSample {
            latents: LatentSet::new(rows, d, values).unwrap(),
            cloud: (flow_config.condition_tokens > 0).then(|| {
                (0..10)
                    .map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)))
                    .collect()
            }),
        };
        let draw = FlowDraw {
            t: rng.random_range(0.05..0.95),
            z0: (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            loss_rows: (0..rows).collect(),
        };
        check.run(&mut store, "flow loss", |g| sample_loss(&flow, g, &flow_sample, &draw));
    }
    let unresolved = check.unresolved as f64 / check.entries as f64;
    let ok = check.worst <= 1e-4 && check.unreachable.is_empty() && unresolved <= MAX_UNRESOLVED;
    let mut detail = format!(
        "max relative error {:.2e} over 20 configurations (at {}); {}/{} entries excluded as unresolved stencils",
        check.worst, check.worst_at, check.unresolved, check.entries
    );
    if !check.unreachable.is_empty() {
        detail += &format!("; unreachable: {:?}", check.unreachable);
    }
    verdict(ok, detail)
}

// ---------------------------------------------------------------- 2

fn structural_round_trip() -> Outcome {
    let (mut total, mut identical) = (0, 0);
    let mut first_failure = None;
    for kind in Kind::catalog() {
        for wireframe in [false, true] {
            for seed in 0..20 {
                let c = generate(kind, seed, wireframe).unwrap();
                let d = build_hasse_diagram(&c).unwrap();
                let set = flatten_to_particles(&d, None);
                let types: Vec<CellType> = set.particles.iter().map(|p| p.cell).collect();
                let anchors: Vec<Vec3> = set.particles.iter().map(|p| p.anchor).collect();
                let (r, repairs) = restore_complex(
                    &types,
                    &anchors,
                    &d.link_matrix(),
                    c.mode,
                    &PredictedGeometry::from_complex(&c),
                );
                total += 1;
                if r == c && repairs.is_empty() {
                    identical += 1;
                } else if first_failure.is_none() {
                    first_failure = Some(format!("{kind} seed {seed} wireframe {wireframe}"));
                }
            }
        }
    }
    let mut detail = format!("{identical}/{total} identical");
    if let Some(f) = first_failure {
        detail += &format!("; first mismatch {f}");
    }
    verdict(identical == total, detail)
}

// ---------------------------------------------------------------- 3

fn counts(kind: Kind) -> (usize, usize) {
    let d = build_hasse_diagram(&generate(kind, 0, false).unwrap()).unwrap();
    (flatten_to_particles(&d, None).true_count, d.links.len())
}

fn counting_oracles() -> Outcome {
    let cube = counts(Kind::Box);
    let prism = counts(Kind::Prism(3));
    let torus = assemble(&generate(Kind::HoleBox, 0, false).unwrap());
    let euler = torus.complex.euler();
    let genus: Vec<f64> = torus.shells.iter().map(|s| s.genus).collect();
    let ok = cube == (26, 48) && prism == (20, 36) && euler == 0 && torus.is_valid() && genus == [1.0];
    verdict(
        ok,
        format!(
            "cube {}/{}, prism {}/{}, genus-1 solid V-E+F={euler} valid={} genus={genus:?}",
            cube.0,
            cube.1,
            prism.0,
            prism.1,
            torus.is_valid()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn vae_overfit() -> Outcome {
    if !full_run() {
        return not_run();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kinds = Kind::solids();
    let batch: Vec<VaeSample> = (0..10)
        .map(|i| {
            let r = generate_record(kinds[i % kinds.len()], i as u64, false).unwrap();
            VaeSample::from_padded(&normalize_and_pad(&r, 64, &mut rng).unwrap()).unwrap()
        })
        .collect();
    let optimizer = AdamWConfig {
        lr: 1e-4,
        ..AdamWConfig::default()
    };
    let mut trainer = VaeTrainer::<f32>::new(VaeConfig::default(), optimizer, 0).unwrap();
    for step in 0..2000 {
        let r = trainer.train_step(&batch).unwrap();
        if step % 250 == 0 {
            eprintln!("  vae overfit step {step}: total {:.4}", r.total);
        }
    }
    let m = evaluate(&trainer.model, &trainer.store, &batch).unwrap();
    let ok = m.type_accuracy == 1.0
        && m.link_f1 == 1.0
        && m.anchor_rmse <= 0.02
        && m.edge_l1 <= 1e-2
        && m.face_deviation <= 2e-2;
    verdict(
        ok,
        format!(
            "type acc {:.4}, link F1 {:.4}, anchor RMSE {:.4}, edge L1 {:.4}, face deviation {:.4}",
            m.type_accuracy, m.link_f1, m.anchor_rmse, m.edge_l1, m.face_deviation
        ),
    )
}

// ---------------------------------------------------------------- 5, 7, 8

const DESK_TRAIN: usize = 2000;
const DESK_HELD_OUT: usize = 100;

fn cache_dir() -> PathBuf {
    std::env::var_os("KCP_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("kcp-acceptance"))
}

fn desk_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.data.budget = 64;
    c.vae_train.steps = 8000;
    c.vae_train.batch_size = 16;
    c
}

/// 2000 training and 100 held-out solids.
fn desk_data() -> (
    Vec<kcp_core::dataio::DatasetRecord>,
    Vec<kcp_core::dataio::DatasetRecord>,
) {
    let mut all = generate_dataset(&Kind::solids(), DESK_TRAIN + DESK_HELD_OUT, 2024, false).unwrap();
    let held_out = all.split_off(DESK_TRAIN);
    (all, held_out)
}

fn desk_vae(config: &RunConfig, train: &[kcp_core::dataio::DatasetRecord]) -> VaeBundle {
    let dir = cache_dir().join("vae");
    if let Ok(b) = VaeBundle::load(&dir) {
        return b;
    }
    let (samples, _) = prepare_samples(train, config.data.budget, config.seed).unwrap();
    let bundle = train_vae(config, &samples, |r| {
        if r.step % 500 == 0 {
            eprintln!("  vae step {}: total {:.4}", r.step, r.total);
        }
    })
    .unwrap();
    bundle.save(&dir).unwrap();
    bundle
}

fn desk_flow(config: &RunConfig, vae: &VaeBundle, train: &[kcp_core::dataio::DatasetRecord]) -> FlowBundle {
    let dir = cache_dir().join("flow");
    if let Ok(b) = FlowBundle::load(&dir) {
        return b;
    }
    let latents = encode_records(vae, train, config.seed).unwrap();
    let bundle = train_flow(config, &latents, |r| {
        if r.step % 500 == 0 {
            eprintln!("  flow step {}: loss {:.4}", r.step, r.loss);
        }
    })
    .unwrap();
    bundle.save(&dir).unwrap();
    bundle
}

fn desk_generalization() -> Outcome {
    if !full_run() {
        return not_run();
    }
    let config = desk_config();
    let (train, held_out) = desk_data();
    let vae = desk_vae(&config, &train);
    let results: Vec<_> = held_out
        .iter()
        .map(|r| reconstruct(&vae, r, &config.fit, &config.validity).unwrap())
        .collect();
    let report = ReconstructionReport::from_results(&results, 2e-2);
    verdict(
        report.faithful >= 90.0,
        format!(
            "{:.1}% exact topology with Chamfer <= 2e-2 ({:.1}% exact topology, median Chamfer {:.2e})",
            report.faithful, report.exact_topology, report.median_chamfer
        ),
    )
}

fn validity_at(vae: &VaeBundle, flow: &FlowBundle, config: &RunConfig, particles: usize) -> f64 {
    let mut options = GenerateOptions::resolve(config, vae, flow);
    options.particles = particles;
    let results = generate_many(vae, flow, &options, 300, config.seed);
    let valid = results
        .iter()
        .filter(|r| r.as_ref().is_ok_and(|g| g.model.is_valid()))
        .count();
    100.0 * valid as f64 / results.len() as f64
}

fn end_to_end_generation() -> Outcome {
    if !full_run() {
        return not_run();
    }
    let config = desk_config();
    let (train, _) = desk_data();
    let vae = desk_vae(&config, &train);
    let flow = desk_flow(&config, &vae, &train);
    let at64 = validity_at(&vae, &flow, &config, 64);
    let at128 = validity_at(&vae, &flow, &config, 128);
    verdict(
        at64 >= 50.0 && at128 >= at64 - 2.0,
        format!("validity {at64:.1}% at 64 particles, {at128:.1}% at 128 (300 samples each)"),
    )
}

fn inpainting() -> Outcome {
    if !full_run() {
        return not_run();
    }
    let config = desk_config();
    let (train, held_out) = desk_data();
    let vae = desk_vae(&config, &train);
    let flow = desk_flow(&config, &vae, &train);
    let options = GenerateOptions::resolve(&config, &vae, &flow);
    let fix = FixSet::parse("vertices,edges").unwrap();
    let mut good = 0;
    for (i, record) in held_out.iter().take(50).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        if let Ok(p) = inpaint(&vae, &flow, record, fix, &options, &mut rng) {
            if p.model.is_valid() && p.wireframe_identical {
                good += 1;
            }
        }
    }
    let pct = 100.0 * good as f64 / 50.0;
    verdict(
        pct >= 70.0,
        format!("{pct:.1}% valid with a bit-identical wireframe (50 held-out solids)"),
    )
}

// ---------------------------------------------------------------- 6

fn flow_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (rows, dim) = (64, 16);
    // Dyadic values keep `z0 + (z1 - z0)` free of rounding, so one step must land on `z1` bit for bit.
    let dyadic = |rng: &mut ChaCha8Rng| f64::from(rng.random_range(-3072..=3072)) / 1024.0;
    let z0: Vec<f64> = (0..rows * dim).map(|_| dyadic(&mut rng)).collect();
    let z1: Vec<f64> = (0..rows * dim).map(|_| dyadic(&mut rng)).collect();
    let field: Vec<f64> = z0.iter().zip(&z1).map(|(a, b)| b - a).collect();
    let out = euler_integrate(&z0, dim, 1, None, |_, _| Ok(field.clone())).unwrap();
    let euler_exact = out == z1;

    let mut draws: Vec<f64> = (0..100_000)
        .map(|_| sample_t_logit_normal(&mut rng, 0.0, 1.0))
        .collect();
    draws.sort_by(f64::total_cmp);
    let median = 0.5 * (draws[49_999] + draws[50_000]);

    // A cube padded to 64 rows: 26 distinct latents, 38 exact duplicates.
    let record = generate_record(Kind::Box, 0, false).unwrap();
    let padded = normalize_and_pad(&record, 64, &mut rng).unwrap();
    let originals: Vec<f64> = (0..26 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut source = padded.source.clone();
    source.shuffle(&mut rng);
    let latents: Vec<f64> = source
        .iter()
        .flat_map(|&s| originals[s * dim..(s + 1) * dim].iter().copied())
        .collect();
    let taus = [f64::from_bits(1), f64::MIN_POSITIVE, 1e-100, 1e-12, 1e-6, 1e-3, 1e-2];
    let mut cluster_counts = Vec::new();
    let mut reps_exact = true;
    for tau in taus {
        let c = cluster_inference_particles(&latents, dim, tau).unwrap();
        cluster_counts.push(c.count);
        for (i, &s) in source.iter().enumerate() {
            let a = c.assignment[i];
            reps_exact &= c.representatives[a * dim..(a + 1) * dim] == originals[s * dim..(s + 1) * dim];
        }
    }
    let ok = euler_exact && (median - 0.5).abs() <= 0.01 && cluster_counts.iter().all(|&n| n == 26) && reps_exact;
    verdict(
        ok,
        format!(
            "one Euler step exact {euler_exact}, logit-normal median {median:.4}, clusters {cluster_counts:?} for tau down to 5e-324, representatives exact {reps_exact}"
        ),
    )
}

// ---------------------------------------------------------------- 9

fn sq(p: &Vec3, q: &Vec3) -> f64 {
    (0..3).map(|k| (p[k] - q[k]).powi(2)).sum()
}

fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        x.iter()
            .map(|p| y.iter().map(|q| sq(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    one(a, b) + one(b, a)
}

/// MMD, COV, 1-NNA, novelty and uniqueness straight from their definitions.
fn brute_metrics(gen: &[Vec<Vec3>], reference: &[Vec<Vec3>], train: &[Vec<Vec3>]) -> [f64; 5] {
    let mmd = reference
        .iter()
        .map(|r| gen.iter().map(|g| brute_chamfer(g, r)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / reference.len() as f64;
    let mut matched = vec![false; reference.len()];
    for g in gen {
        let ds: Vec<f64> = reference.iter().map(|r| brute_chamfer(g, r)).collect();
        let best = ds.iter().copied().fold(f64::INFINITY, f64::min);
        for (m, d) in matched.iter_mut().zip(&ds) {
            *m |= *d == best;
        }
    }
    let cov = 100.0 * matched.iter().filter(|&&m| m).count() as f64 / reference.len() as f64;
    let all: Vec<(&Vec<Vec3>, bool)> = gen
        .iter()
        .map(|c| (c, true))
        .chain(reference.iter().map(|c| (c, false)))
        .collect();
    let mut score = 0.0;
    for (i, (x, label)) in all.iter().enumerate() {
        let ds: Vec<(f64, bool)> = all
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, (y, l))| (brute_chamfer(x, y), *l))
            .collect();
        let best = ds.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
        let tied: Vec<bool> = ds.iter().filter(|d| d.0 == best).map(|d| d.1).collect();
        score += tied.iter().filter(|&&l| l == *label).count() as f64 / tied.len() as f64;
    }
    let nna = 100.0 * score / all.len() as f64;
    let (tau_n, tau_u) = (0.03, 0.015);
    let novel = gen
        .iter()
        .filter(|g| train.iter().all(|t| brute_chamfer(g, t) > tau_n))
        .count();
    let unique = (0..gen.len())
        .filter(|&i| (0..gen.len()).all(|j| i == j || brute_chamfer(&gen[i], &gen[j]) > tau_u))
        .count();
    let n = gen.len() as f64;
    [mmd, cov, nna, 100.0 * novel as f64 / n, 100.0 * unique as f64 / n]
}

fn brute_jsd(a: &[Vec<Vec3>], b: &[Vec<Vec3>], res: usize) -> f64 {
    let hist = |clouds: &[Vec<Vec3>]| {
        let mut h = std::collections::HashMap::<[i64; 3], f64>::new();
        let total = clouds.iter().map(Vec::len).sum::<usize>() as f64;
        for p in clouds.iter().flatten() {
            let cell = p.map(|x| (((x + 1.0) / 2.0 * res as f64).floor() as i64).clamp(0, res as i64 - 1));
            *h.entry(cell).or_default() += 1.0 / total;
        }
        h
    };
    let (p, q) = (hist(a), hist(b));
    let mut keys: Vec<[i64; 3]> = p.keys().chain(q.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let mut js = 0.0;
    for k in keys {
        let (x, y) = (p.get(&k).copied().unwrap_or(0.0), q.get(&k).copied().unwrap_or(0.0));
        let m = 0.5 * (x + y);
        if x > 0.0 {
            js += 0.5 * x * (x / m).ln();
        }
        if y > 0.0 {
            js += 0.5 * y * (y / m).ln();
        }
    }
    js
}

fn small_clouds(rng: &mut impl Rng, count: usize) -> Vec<Vec<Vec3>> {
    (0..count)
        .map(|_| {
            let c = [0, 1, 2].map(|_| rng.random_range(-0.5..0.5));
            let spread = rng.random_range(0.02..0.3);
            (0..30)
                .map(|_| [0, 1, 2].map(|k| c[k] + spread * rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let same = small_clouds(&mut rng, 8);
    let d = distribution_metrics(&same, &same).unwrap();
    let jsd_same = jsd_voxel(&same, &same, 28);
    let identity_ok = d.mmd == 0.0 && d.cov == 100.0 && d.one_nna == 0.0 && jsd_same == 0.0;

    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let gen = small_clouds(&mut rng, 2 + trial % 9);
        let mut reference = small_clouds(&mut rng, 2 + (trial * 7) % 9);
        let train = small_clouds(&mut rng, 3 + trial % 5);
        if trial % 4 == 0 {
            reference[0] = gen[0].clone();
        }
        let m = distribution_metrics(&gen, &reference).unwrap();
        let div = novelty_uniqueness(&gen, &train, 0.03, 0.015).unwrap();
        let fast = [m.mmd, m.cov, m.one_nna, div.novelty, div.uniqueness];
        let brute = brute_metrics(&gen, &reference, &train);
        for (a, b) in fast.iter().zip(&brute) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((jsd_voxel(&gen, &reference, 28) - brute_jsd(&gen, &reference, 28)).abs());
        let total: f64 = voxel_distribution(&gen, 28).iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    let cc = cyclomatic_complexity(&generate(Kind::Box, 0, false).unwrap());
    verdict(
        identity_ok && worst <= 1e-9 && cc == 6.0,
        format!(
            "gen=ref gives MMD {} COV {} 1-NNA {} JSD {}; max deviation from brute force {worst:.1e}; CC(cube) {cc}",
            d.mmd, d.cov, d.one_nna, jsd_same
        ),
    )
}

// ---------------------------------------------------------------- 10

fn validity_discrimination() -> Outcome {
    let config = ValidityConfig::default();
    let (mut clean, mut clean_ok, mut mutated, mut rejected) = (0, 0, 0, 0);
    let mut modes = std::collections::BTreeSet::new();
    let mut escapes = Vec::new();
    for kind in Kind::catalog() {
        for wireframe in [false, true] {
            for seed in 0..5 {
                let c = generate(kind, seed, wireframe).unwrap();
                modes.insert(format!("{:?}", c.mode));
                clean += 1;
                clean_ok += usize::from(check_validity(&c, &config).valid);
                for m in Mutation::ALL {
                    mutated += 1;
                    if check_validity(&m.apply(&c), &config).valid {
                        escapes.push(format!("{kind}/{m}"));
                    } else {
                        rejected += 1;
                    }
                }
            }
        }
    }
    let mut detail = format!(
        "{clean_ok}/{clean} generated models pass, {rejected}/{mutated} mutants ({} mutations) fail, modes {modes:?}",
        Mutation::ALL.len()
    );
    if !escapes.is_empty() {
        detail += &format!("; escaped: {:?}", &escapes[..escapes.len().min(5)]);
    }
    verdict(clean_ok == clean && rejected == mutated && modes.len() == 3, detail)
}
