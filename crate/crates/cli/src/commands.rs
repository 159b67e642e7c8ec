use std::path::{Path, PathBuf};

use kcp_core::assembly::{check_validity, export_model, read_model, ExportFormat, ValidityConfig};
use kcp_core::complex::CellComplex;
use kcp_core::dataio::{generate_dataset, normalize_record, parse_kinds, read_records, write_records};
use kcp_core::metrics::{EvalReport, ModelSummary};
use kcp_core::pipeline::{
    complex_cloud, encode_records, generate_many, inpaint, prepare_samples, read_latents, reconstruct, record_seed,
    train_flow, train_vae, write_latents, FixSet, FlowBundle, GenerateOptions, ReconstructionReport, RunConfig,
    VaeBundle,
};
use kcp_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::{Cli, Command, CONFIG_ENV};

const SUMMARY_FILE: &str = "summary.json";
const LOSSES_FILE: &str = "losses.jsonl";

struct Context {
    workdir: PathBuf,
    config: RunConfig,
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    /// Validate overrides and write `config.toml` into an output directory.
    fn echo_dir(&self, dir: &Path) -> Result<()> {
        self.config.validate()?;
        self.config.echo_into(dir)
    }

    /// Validate overrides and write `<file>.config.toml` next to an output file.
    fn echo_file(&self, file: &Path) -> Result<()> {
        self.config.validate()?;
        let mut name = file.as_os_str().to_owned();
        name.push(".config.toml");
        let path = PathBuf::from(name);
        write_text(&path, &self.config.to_toml()?)
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => std::fs::create_dir_all(parent).map_err(|e| io(parent, e)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(p) => RunConfig::load(&cli.workdir.join(p)),
        None => Ok(RunConfig::default()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let threads = cli.threads.unwrap_or(config.threads);
    if threads > 0 {
        // Fails only if a pool was already built, in which case the existing one is used.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let mut ctx = Context {
        workdir: cli.workdir.clone(),
        config,
    };
    match cli.command {
        Command::GenData(a) => gen_data(&mut ctx, a),
        Command::TrainVae(a) => train_vae_cmd(&mut ctx, a),
        Command::Roundtrip(a) => roundtrip(&ctx, a),
        Command::Encode(a) => encode(&mut ctx, a),
        Command::TrainFlow(a) => train_flow_cmd(&mut ctx, a),
        Command::Sample(a) => sample(&mut ctx, a),
        Command::Inpaint(a) => inpaint_cmd(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Export(a) => export(&ctx, a),
    }
}

fn gen_data(ctx: &mut Context, a: crate::GenData) -> Result<()> {
    let c = &mut ctx.config;
    set(&mut c.data.kinds, a.kinds);
    set(&mut c.data.count, a.count);
    set(&mut c.seed, a.seed);
    if let Some(mode) = a.mode {
        c.data.wireframe = match mode.as_str() {
            "solid" => false,
            "wireframe" => true,
            other => {
                return Err(Error::Config(format!(
                    "unknown mode `{other}` (expected solid or wireframe)"
                )))
            }
        };
    }
    let kinds = parse_kinds(&c.data.kinds)?;
    let records = generate_dataset(&kinds, c.data.count, c.seed, c.data.wireframe)?;
    let out = ctx.path(&a.out);
    ctx.echo_file(&out)?;
    create_parent(&out)?;
    write_records(&out, &records)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

/// Keep every `log_every`-th report as a JSON line and echo it to stderr.
fn loss_logger<T: Serialize>(log_every: usize, lines: &mut Vec<String>) -> impl FnMut(&T, usize) + '_ {
    move |report, step| {
        if log_every > 0 && (step % log_every == 0) {
            if let Ok(line) = serde_json::to_string(report) {
                eprintln!("{line}");
                lines.push(line);
            }
        }
    }
}

fn write_losses(dir: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_text(&dir.join(LOSSES_FILE), &text)
}

fn train_vae_cmd(ctx: &mut Context, a: crate::TrainVae) -> Result<()> {
    let c = &mut ctx.config;
    set(&mut c.vae_train.steps, a.steps);
    set(&mut c.vae_train.batch_size, a.batch_size);
    set(&mut c.vae_train.lr, a.lr);
    set(&mut c.data.budget, a.budget);
    set(&mut c.seed, a.seed);
    let out = ctx.path(&a.ckpt_out);
    ctx.echo_dir(&out)?;
    let records = read_records(&ctx.path(&a.data))?;
    let (samples, skipped) = prepare_samples(&records, ctx.config.data.budget, ctx.config.seed)?;
    if skipped > 0 {
        eprintln!(
            "skipped {skipped} records over the particle budget {}",
            ctx.config.data.budget
        );
    }
    let mut lines = Vec::new();
    let mut log = loss_logger(ctx.config.vae_train.log_every, &mut lines);
    let bundle = train_vae(&ctx.config, &samples, |r| log(r, r.step))?;
    drop(log);
    bundle.save(&out)?;
    write_losses(&out, &lines)?;
    println!("saved VAE to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct RoundtripOutput {
    report: ReconstructionReport,
    records: Vec<RoundtripRow>,
}

#[derive(Serialize)]
struct RoundtripRow {
    id: String,
    exact_topology: bool,
    chamfer: f64,
    valid: bool,
}

fn roundtrip(ctx: &Context, a: crate::Roundtrip) -> Result<()> {
    let vae = VaeBundle::load(&ctx.path(&a.vae))?;
    let mut records = read_records(&ctx.path(&a.data))?;
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    let c = &ctx.config;
    let results = records
        .par_iter()
        .map(|r| reconstruct(&vae, r, &c.fit, &c.validity))
        .collect::<Result<Vec<_>>>()?;
    let report = ReconstructionReport::from_results(&results, c.eval.reconstruction_chamfer);
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?
    );
    if let Some(out) = a.out {
        let out = ctx.path(&out);
        ctx.echo_file(&out)?;
        let rows = results
            .iter()
            .map(|r| RoundtripRow {
                id: r.id.clone(),
                exact_topology: r.exact_topology,
                chamfer: r.chamfer,
                valid: r.model.is_valid(),
            })
            .collect();
        write_json(&out, &RoundtripOutput { report, records: rows })?;
    }
    Ok(())
}

fn encode(ctx: &mut Context, a: crate::Encode) -> Result<()> {
    set(&mut ctx.config.seed, a.seed);
    let vae = VaeBundle::load(&ctx.path(&a.vae))?;
    let records = read_records(&ctx.path(&a.data))?;
    let latents = encode_records(&vae, &records, ctx.config.seed)?;
    let out = ctx.path(&a.out);
    ctx.echo_file(&out)?;
    create_parent(&out)?;
    write_latents(&out, &latents)?;
    let skipped = records.len() - latents.len();
    if skipped > 0 {
        eprintln!("skipped {skipped} records over the particle budget {}", vae.budget);
    }
    println!("wrote {} latent sets to {}", latents.len(), out.display());
    Ok(())
}

fn train_flow_cmd(ctx: &mut Context, a: crate::TrainFlow) -> Result<()> {
    let c = &mut ctx.config;
    set(&mut c.flow_train.steps, a.steps);
    set(&mut c.flow_train.batch_size, a.batch_size);
    set(&mut c.flow_train.lr, a.lr);
    set(&mut c.seed, a.seed);
    let out = ctx.path(&a.ckpt_out);
    ctx.echo_dir(&out)?;
    let latents = read_latents(&ctx.path(&a.latents))?;
    let mut lines = Vec::new();
    let mut log = loss_logger(ctx.config.flow_train.log_every, &mut lines);
    let bundle = train_flow(&ctx.config, &latents, |r| log(r, r.step))?;
    drop(log);
    bundle.save(&out)?;
    write_losses(&out, &lines)?;
    println!("saved flow model to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    index: usize,
    file: Option<String>,
    particles: usize,
    clusters: Option<usize>,
    faces: Option<usize>,
    valid: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct SampleSummary {
    count: usize,
    particles: usize,
    steps: usize,
    tau: f64,
    seed: u64,
    valid: usize,
    failed: usize,
    samples: Vec<SampleRow>,
}

fn sample(ctx: &mut Context, a: crate::Sample) -> Result<()> {
    let c = &mut ctx.config;
    set(&mut c.sample.count, a.count);
    set(&mut c.sample.particles, a.particles);
    set(&mut c.sample.steps, a.steps);
    set(&mut c.seed, a.seed);
    if a.tau.is_some() {
        c.sample.tau = a.tau;
    }
    let out = ctx.path(&a.out);
    ctx.echo_dir(&out)?;
    let vae = VaeBundle::load(&ctx.path(&a.vae))?;
    let flow = FlowBundle::load(&ctx.path(&a.flow))?;
    let options = GenerateOptions::resolve(&ctx.config, &vae, &flow);
    let seed = ctx.config.seed;
    let results = generate_many(&vae, &flow, &options, ctx.config.sample.count, seed);
    let mut rows = Vec::with_capacity(results.len());
    for (index, result) in results.into_iter().enumerate() {
        let row = match result {
            Ok(g) => {
                let file = format!("sample_{index:04}.json");
                export_model(&g.model, ExportFormat::Json, &out.join(&file))?;
                SampleRow {
                    index,
                    file: Some(file),
                    particles: g.particles,
                    clusters: Some(g.clusters),
                    faces: Some(g.model.complex.faces.len()),
                    valid: g.model.is_valid(),
                    error: None,
                }
            }
            Err(e) => SampleRow {
                index,
                file: None,
                particles: options.particles,
                clusters: None,
                faces: None,
                valid: false,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let summary = SampleSummary {
        count: rows.len(),
        particles: options.particles,
        steps: options.steps,
        tau: options.tau,
        seed,
        valid: rows.iter().filter(|r| r.valid).count(),
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
        samples: rows,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    println!(
        "generated {} models ({} valid, {} failed) in {}",
        summary.count,
        summary.valid,
        summary.failed,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct InpaintRow {
    id: String,
    file: Option<String>,
    clusters: Option<usize>,
    wireframe_identical: bool,
    valid: bool,
    error: Option<String>,
}

fn inpaint_cmd(ctx: &mut Context, a: crate::Inpaint) -> Result<()> {
    let c = &mut ctx.config;
    set(&mut c.sample.particles, a.particles);
    set(&mut c.sample.steps, a.steps);
    set(&mut c.seed, a.seed);
    let fix = FixSet::parse(&a.fix)?;
    let out = ctx.path(&a.out);
    ctx.echo_dir(&out)?;
    let vae = VaeBundle::load(&ctx.path(&a.vae))?;
    let flow = FlowBundle::load(&ctx.path(&a.flow))?;
    let options = GenerateOptions::resolve(&ctx.config, &vae, &flow);
    let mut records = read_records(&ctx.path(&a.input))?;
    if let Some(n) = a.limit {
        records.truncate(n);
    }
    let seed = ctx.config.seed;
    let results: Vec<_> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            inpaint(
                &vae,
                &flow,
                r,
                fix,
                &options,
                &mut ChaCha8Rng::seed_from_u64(record_seed(seed, i)),
            )
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for (i, (record, result)) in records.iter().zip(results).enumerate() {
        rows.push(match result {
            Ok(p) => {
                let file = format!("inpaint_{i:04}.json");
                export_model(&p.model, ExportFormat::Json, &out.join(&file))?;
                InpaintRow {
                    id: p.id,
                    file: Some(file),
                    clusters: Some(p.clusters),
                    wireframe_identical: p.wireframe_identical,
                    valid: p.model.is_valid(),
                    error: None,
                }
            }
            Err(e) => InpaintRow {
                id: record.id.clone(),
                file: None,
                clusters: None,
                wireframe_identical: false,
                valid: false,
                error: Some(e.to_string()),
            },
        });
    }
    let identical = rows.iter().filter(|r| r.wireframe_identical).count();
    write_json(&out.join(SUMMARY_FILE), &rows)?;
    println!(
        "in-painted {} records ({identical} with an identical wireframe) in {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

/// Models from a directory of model JSON files or from a dataset file.
fn load_models(path: &Path, validity: &ValidityConfig) -> Result<Vec<(CellComplex, bool)>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != SUMMARY_FILE))
            .collect();
        files.sort();
        files
            .iter()
            .map(|f| read_model(f).map(|m| (m.complex.clone(), m.is_valid())))
            .collect()
    } else {
        Ok(read_records(path)?
            .into_iter()
            .map(|mut r| {
                normalize_record(&mut r);
                let valid = check_validity(&r.complex, validity).valid;
                (r.complex, valid)
            })
            .collect())
    }
}

/// Seeded per-index clouds; models without any cells have no points and are
/// left out of the point-cloud metrics.
fn clouds(models: &[(CellComplex, bool)], seed: u64, what: &str) -> Vec<Vec<kcp_core::geometry::Vec3>> {
    let all: Vec<_> = models
        .par_iter()
        .enumerate()
        .map(|(i, (c, _))| complex_cloud(c, record_seed(seed, i)))
        .collect();
    let empty = all.iter().filter(|c| c.is_empty()).count();
    if empty > 0 {
        eprintln!("{empty} empty {what} models left out of the point-cloud metrics");
    }
    all.into_iter().filter(|c| !c.is_empty()).collect()
}

fn eval(ctx: &mut Context, a: crate::Eval) -> Result<()> {
    set(&mut ctx.config.seed, a.seed);
    let c = &ctx.config;
    let gen = load_models(&ctx.path(&a.gen), &c.validity)?;
    let reference = load_models(&ctx.path(&a.reference), &c.validity)?;
    let train = match &a.train {
        Some(p) => load_models(&ctx.path(p), &c.validity)?,
        None => reference.clone(),
    };
    let summaries: Vec<ModelSummary> = gen.iter().map(|(m, v)| ModelSummary::of(m, *v)).collect();
    let gen_clouds = clouds(&gen, c.seed, "generated");
    let ref_clouds = clouds(&reference, c.seed, "reference");
    let train_clouds = clouds(&train, c.seed, "training");
    for (set, name) in [
        (&gen_clouds, "generated models"),
        (&ref_clouds, "reference models"),
        (&train_clouds, "training models"),
    ] {
        if set.is_empty() {
            return Err(Error::Empty(name));
        }
    }
    let report = EvalReport::compute(
        &gen_clouds,
        &summaries,
        &ref_clouds,
        &train_clouds,
        c.eval.novelty_threshold,
        c.eval.uniqueness_threshold,
        c.seed,
    )?;
    let out = ctx.path(&a.out);
    ctx.echo_file(&out)?;
    write_json(&out, &report)?;
    print!("{}", report.table());
    Ok(())
}

fn export(ctx: &Context, a: crate::Export) -> Result<()> {
    let format: ExportFormat = a.format.parse()?;
    let model = read_model(&ctx.path(&a.input))?;
    let out = ctx.path(&a.out);
    export_model(&model, format, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
