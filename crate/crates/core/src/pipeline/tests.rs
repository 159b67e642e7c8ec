use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ccvae::VaeConfig;
use crate::dataio::{generate_dataset, generate_record, Kind};
use crate::flow::{FlowConfig, LatentSet};

fn tiny_config() -> RunConfig {
    let mut c = RunConfig {
        vae: VaeConfig::tiny(),
        flow: FlowConfig::tiny(),
        ..RunConfig::default()
    };
    c.data.budget = 32;
    c.vae_train.steps = 3;
    c.vae_train.batch_size = 2;
    c.flow_train.steps = 3;
    c.flow_train.batch_size = 2;
    c.sample.steps = 3;
    c
}

#[test]
fn config_round_trips_through_toml() {
    let c = tiny_config();
    assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn config_rejects_unknown_keys_and_mismatches() {
    assert!(RunConfig::from_toml("sed = 3").is_err());
    assert!(RunConfig::from_toml("[vae]\nwidth = 3").is_err());
    assert!(RunConfig::from_toml("[flow]\nlatent_dim = 8").is_err());
    assert!(RunConfig::from_toml("[sample]\ntau = -1.0").is_err());
    let c = RunConfig::from_toml("seed = 9\n[data]\nbudget = 48").unwrap();
    assert_eq!((c.seed, c.data.budget, c.data.count), (9, 48, 100));
}

#[test]
fn config_echo_writes_effective_values() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_config();
    c.echo_into(dir.path()).unwrap();
    assert_eq!(RunConfig::load(&dir.path().join("config.toml")).unwrap(), c);
}

#[test]
fn fix_set_parsing() {
    assert_eq!(
        FixSet::parse("vertices,edges").unwrap(),
        FixSet {
            vertices: true,
            edges: true
        }
    );
    assert!(FixSet::parse("faces").is_err());
    assert!(FixSet::parse("").is_err());
}

#[test]
fn wireframe_comparison_ignores_order_and_direction() {
    let r = generate_record(Kind::Box, 3, false).unwrap();
    let a = r.complex.clone();
    let mut b = a.clone();
    b.edges.reverse();
    for e in &mut b.edges {
        e.curve = e.curve.reversed();
        e.v.swap(0, 1);
    }
    assert!(wireframe_identical(&a, &b));
    let mut c = a.clone();
    c.vertices[0][1] = f64::from_bits(c.vertices[0][1].to_bits() + 1);
    assert!(!wireframe_identical(&a, &c));
}

#[test]
fn latents_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = LatentSet::new(2, 2, vec![0.1, -0.2, 1.0 / 3.0, 4.5]).unwrap();
    set.sources = Some(vec![0, 1]);
    let records = vec![LatentRecord {
        id: "a".into(),
        latents: set,
    }];
    let path = dir.path().join("z.jsonl");
    write_latents(&path, &records).unwrap();
    assert_eq!(read_latents(&path).unwrap(), records);
}

#[test]
fn stages_run_end_to_end_and_bundles_reload() {
    let config = tiny_config();
    let records = generate_dataset(&[Kind::Box, Kind::Prism(3)], 4, 1, false).unwrap();
    let (samples, skipped) = prepare_samples(&records, config.data.budget, 0).unwrap();
    assert_eq!((samples.len(), skipped), (4, 0));
    let mut steps = 0;
    let vae = train_vae(&config, &samples, |_| steps += 1).unwrap();
    assert_eq!(steps, 3);

    let dir = tempfile::tempdir().unwrap();
    vae.save(&dir.path().join("vae")).unwrap();
    let reloaded = VaeBundle::load(&dir.path().join("vae")).unwrap();
    let a = encode_records(&vae, &records, 5).unwrap();
    assert_eq!(a, encode_records(&reloaded, &records, 5).unwrap());
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|r| r.latents.rows == 32));

    let rec = reconstruct(&vae, &records[0], &config.fit, &config.validity).unwrap();
    let report = ReconstructionReport::from_results(&[rec], 2e-2);
    assert_eq!(report.count, 1);

    let flow = train_flow(&config, &a, |_| {}).unwrap();
    assert!(flow.tau > 0.0);
    flow.save(&dir.path().join("flow")).unwrap();
    let flow2 = FlowBundle::load(&dir.path().join("flow")).unwrap();
    let options = GenerateOptions::resolve(&config, &vae, &flow);
    assert_eq!(options.particles, 32);
    let g1 = generate(&vae, &flow, &options, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let g2 = generate(&reloaded, &flow2, &options, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(g1.clusters, g2.clusters);
    assert_eq!(g1.decoded.types, g2.decoded.types);
    assert!(g1.clusters >= 1 && g1.clusters <= 32);

    let fix = FixSet::parse("vertices,edges").unwrap();
    let out = inpaint(
        &vae,
        &flow,
        &records[1],
        fix,
        &options,
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap();
    assert!(out.wireframe_identical);
}
