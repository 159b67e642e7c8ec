use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
budget = 32
count = 4
[vae]
dim = 16
heads = 2
encoder_layers = 1
decoder_layers = 1
gcn_layers = 2
latent_dim = 4
type_embedding = 4
fourier_bands = 2
head_hidden = 16
pointnet_width = 8
surface_grid = 4
[vae_train]
steps = 3
batch_size = 2
log_every = 1
[flow]
latent_dim = 4
dim = 16
layers = 2
heads = 2
time_frequencies = 8
condition_bands = 2
[flow_train]
steps = 3
batch_size = 2
log_every = 1
[sample]
steps = 3
"#;

fn kcp(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcp"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env_remove("KCP_CONFIG")
        .output()
        .expect("spawn kcp")
}

fn ok(workdir: &Path, args: &[&str]) -> Output {
    let out = kcp(workdir, args);
    assert!(
        out.status.success(),
        "kcp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn tiny_workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    for out in ["a/data.jsonl", "b/data.jsonl"] {
        ok(
            w,
            &[
                "gen-data", "--kinds", "all", "--count", "12", "--seed", "7", "--out", out,
            ],
        );
    }
    let a = std::fs::read(w.join("a/data.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(w.join("b/data.jsonl")).unwrap());
    let echo = std::fs::read_to_string(w.join("a/data.jsonl.config.toml")).unwrap();
    assert!(echo.contains("seed = 7"));

    ok(
        w,
        &["gen-data", "--count", "12", "--seed", "8", "--out", "c/data.jsonl"],
    );
    assert_ne!(a, std::fs::read(w.join("c/data.jsonl")).unwrap());
}

#[test]
fn wireframe_mode_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["gen-data", "--count", "2", "--mode", "wireframe", "--out", "w.jsonl"],
    );
    let text = std::fs::read_to_string(dir.path().join("w.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("\"wireframe\""));
}

#[test]
fn eval_of_identical_sets_gives_oracle_values() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &["gen-data", "--count", "6", "--out", "ref.jsonl"]);
    let out = ok(
        w,
        &[
            "eval",
            "--gen",
            "ref.jsonl",
            "--ref",
            "ref.jsonl",
            "--train",
            "ref.jsonl",
            "--out",
            "eval.json",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("COV"));
    let r = json(&w.join("eval.json"));
    assert_eq!(r["mmd_x100"].as_f64().unwrap(), 0.0);
    assert_eq!(r["cov"].as_f64().unwrap(), 100.0);
    assert_eq!(r["one_nna"].as_f64().unwrap(), 0.0);
    assert_eq!(r["jsd_x100"].as_f64().unwrap(), 0.0);
    assert_eq!(r["valid"].as_f64().unwrap(), 100.0);
    assert!(w.join("eval.json.config.toml").exists());
}

#[test]
fn config_from_environment_is_used() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[data]\ncount = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kcp"))
        .arg("--workdir")
        .arg(dir.path())
        .args(["gen-data", "--out", "d.jsonl"])
        .env("KCP_CONFIG", "c.toml")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let code = |args: &[&str]| kcp(w, args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["gen-data"]), 1);
    assert_eq!(code(&["gen-data", "--mode", "volume", "--out", "x.jsonl"]), 1);
    assert_eq!(code(&["gen-data", "--kinds", "blob", "--out", "x.jsonl"]), 1);
    std::fs::write(w.join("bad.toml"), "sed = 1\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "gen-data", "--out", "x.jsonl"]), 1);
    std::fs::write(w.join("broken.jsonl"), "{not json\n").unwrap();
    assert_eq!(
        code(&[
            "eval",
            "--gen",
            "broken.jsonl",
            "--ref",
            "broken.jsonl",
            "--out",
            "e.json"
        ]),
        1
    );
    assert_eq!(
        code(&["export", "--in", "missing.json", "--format", "obj", "--out", "m.obj"]),
        2
    );
    assert_eq!(code(&["train-vae", "--data", "missing.jsonl", "--ckpt-out", "vae"]), 2);
}

#[test]
fn pipeline_runs_through_every_stage() {
    let dir = tiny_workdir();
    let w = dir.path();
    let cfg = ["--config", "tiny.toml"];
    let run = |args: &[&str]| ok(w, &[&cfg[..], args].concat());

    run(&["gen-data", "--kinds", "box,prism3", "--out", "data/train.jsonl"]);
    run(&["train-vae", "--data", "data/train.jsonl", "--ckpt-out", "ck/vae"]);
    for f in ["config.toml", "meta.json", "params.ckpt"] {
        assert!(w.join("ck/vae").join(f).exists(), "missing {f}");
    }
    assert_eq!(
        std::fs::read_to_string(w.join("ck/vae/losses.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let out = run(&[
        "roundtrip",
        "--data",
        "data/train.jsonl",
        "--vae",
        "ck/vae",
        "--out",
        "rt.json",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("exact_topology"));
    assert_eq!(json(&w.join("rt.json"))["report"]["count"], 4);

    run(&[
        "encode",
        "--vae",
        "ck/vae",
        "--data",
        "data/train.jsonl",
        "--out",
        "z.jsonl",
    ]);
    assert_eq!(std::fs::read_to_string(w.join("z.jsonl")).unwrap().lines().count(), 4);
    run(&["train-flow", "--latents", "z.jsonl", "--ckpt-out", "ck/flow"]);

    // Twice the training budget of particles.
    run(&[
        "sample",
        "--vae",
        "ck/vae",
        "--flow",
        "ck/flow",
        "--count",
        "3",
        "--particles",
        "64",
        "--seed",
        "5",
        "--out",
        "gen",
    ]);
    let summary = json(&w.join("gen/summary.json"));
    assert_eq!(summary["count"], 3);
    assert_eq!(summary["particles"], 64);
    for s in summary["samples"].as_array().unwrap() {
        assert!(s["error"].is_null(), "{s}");
        let clusters = s["clusters"].as_u64().unwrap();
        assert!((1..=64).contains(&clusters));
        assert!(w.join("gen").join(s["file"].as_str().unwrap()).exists());
    }
    assert!(w.join("gen/config.toml").exists());

    // Same seed, same models.
    run(&[
        "sample",
        "--vae",
        "ck/vae",
        "--flow",
        "ck/flow",
        "--count",
        "3",
        "--particles",
        "64",
        "--seed",
        "5",
        "--out",
        "gen2",
    ]);
    for i in 0..3 {
        let f = format!("sample_{i:04}.json");
        assert_eq!(
            std::fs::read(w.join("gen").join(&f)).unwrap(),
            std::fs::read(w.join("gen2").join(&f)).unwrap()
        );
    }

    run(&[
        "inpaint",
        "--input",
        "data/train.jsonl",
        "--vae",
        "ck/vae",
        "--flow",
        "ck/flow",
        "--limit",
        "2",
        "--out",
        "inp",
    ]);
    let rows = json(&w.join("inp/summary.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["wireframe_identical"] == true), "{rows:?}");

    run(&[
        "export",
        "--in",
        "inp/inpaint_0000.json",
        "--format",
        "obj",
        "--out",
        "m.obj",
    ]);
    assert!(std::fs::read_to_string(w.join("m.obj")).unwrap().contains("v "));
    run(&[
        "export",
        "--in",
        "inp/inpaint_0000.json",
        "--format",
        "json",
        "--out",
        "m.json",
    ]);
    assert_eq!(json(&w.join("m.json")), json(&w.join("inp/inpaint_0000.json")));
}
