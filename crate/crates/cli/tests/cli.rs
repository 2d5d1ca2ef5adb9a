use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use oodrecover_core::envs::make;
use oodrecover_core::types::validate_against_schema;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oodrecover"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(env: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(env)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--hidden", "8,8", "--batch-size", "16", "--buffer-size", "1000", "--warmup-steps", "50",
    "--eval-interval", "100", "--eval-episodes", "1",
];

fn tiny(args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend_from_slice(TINY);
    run(&all)
}

#[test]
fn show_defaults_matches_reference_table() {
    let o = run(&["config", "show-defaults"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let v: toml::Value = toml::from_str(&text).unwrap();
    let sac = &v["original"]["sac"];
    assert_eq!(sac["gamma"].as_float(), Some(0.99));
    assert_eq!(sac["adam_beta1"].as_float(), Some(0.9));
    assert_eq!(sac["adam_beta2"].as_float(), Some(0.99));
    assert_eq!(sac["policy_lr"].as_float(), Some(0.0003));
    assert_eq!(sac["q_lr"].as_float(), Some(0.0003));
    assert_eq!(v["original"]["batch_size"].as_integer(), Some(256));
    assert_eq!(v["original"]["buffer_capacity"].as_integer(), Some(1_000_000));
    assert_eq!(v["retrain"]["total_steps"].as_integer(), Some(1_000_000));
    assert_eq!(v["retrain"]["eval_episodes"].as_integer(), Some(5));
    assert_eq!(v["retrain"]["eval_interval"].as_integer(), Some(5000));
    assert_eq!(v["client"]["temperature"].as_float(), Some(0.0));
    assert!(text.contains("cartpole = 0.05"));
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["train-original", "--env", "hopper"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("cartpole, flipbot"), "{}", stderr(&o));
    assert_eq!(code(&run(&["train-original", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[original]\nbatch_size = 64\ntotal_steps = 10\n").unwrap();
    let o = run(&["config", "show", "--config", p(&cfg), "--total-steps", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: toml::Value = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(v["seed"].as_integer(), Some(3));
    assert_eq!(v["original"]["batch_size"].as_integer(), Some(64));
    assert_eq!(v["original"]["total_steps"].as_integer(), Some(20));
    std::fs::write(&cfg, "[client]\ntemperature = 0.5\n").unwrap();
    assert_eq!(code(&run(&["config", "show", "--config", p(&cfg)])), 1);
}

#[test]
fn zero_step_training_with_several_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("orig");
    let o = tiny(&["train-original", "--seeds", "3", "--total-steps", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for s in 0..3 {
        let run_dir = out.join(format!("seed_{s}"));
        assert!(run_dir.join("agent.ckpt").exists());
        let csv = std::fs::read_to_string(run_dir.join("curve.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2, "{csv}");
    }
    let best = std::fs::read_to_string(out.join("best.txt")).unwrap();
    assert!(best.trim().starts_with("seed_"));
    assert_eq!(
        std::fs::read(out.join("best.ckpt")).unwrap(),
        std::fs::read(out.join(best.trim()).join("agent.ckpt")).unwrap()
    );
}

#[test]
fn training_is_reproducible_from_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}"));
        let o = tiny(&["train-original", "--total-steps", "300", "--seed", "4", "--out", p(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(out.join("seed_4"));
    }
    for f in ["curve.csv", "curve.json", "agent.ckpt", "manifest.json"] {
        assert_eq!(
            std::fs::read(outputs[0].join(f)).unwrap(),
            std::fs::read(outputs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = std::fs::read_to_string(outputs[0].join("curve.csv")).unwrap();
    let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0", "100", "200", "300"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(outputs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["batch_size"], 16);
    assert_eq!(manifest["artifacts"]["curve.csv"].as_str().unwrap().len(), 64);
}

#[test]
fn capture_is_deterministic_and_schema_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["capture-ood", "--env", "cartpole", "--seed", "2", "--out", p(d)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["snapshot.txt", "snapshot.svg", "state.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let state: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("state.json")).unwrap()).unwrap();
    let values: Vec<f64> = state["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((values[2].abs() - std::f64::consts::PI).abs() < 0.1, "{values:?}");
    let env = make("cartpole").unwrap();
    let sv = validate_against_schema(&values, &env.spec().state_schema).unwrap();
    assert_eq!(sv.values(), values.as_slice());
    assert!(std::fs::read_to_string(a.join("snapshot.txt")).unwrap().contains("below the cart"));
}

#[test]
fn generate_with_recorded_backend() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture("cartpole");
    let transcript = fx.join("transcript.jsonl");
    let out = dir.path().join("programs");
    let o = run(&[
        "generate", "--env", "cartpole", "--snapshot", p(&fx), "--transcript", p(&transcript), "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("reward.dsl sha256 ") && stdout.contains("eval.dsl sha256 "), "{stdout}");
    for f in ["d_ood.txt", "d_recovery.txt", "d_env.txt", "reward.dsl", "eval.dsl", "transcript.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }

    // No transcript configured: usage error.
    let o = run(&["generate", "--snapshot", p(&fx), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    // Transcript file missing: runtime error.
    let missing = dir.path().join("none.jsonl");
    let o = run(&["generate", "--snapshot", p(&fx), "--transcript", p(&missing), "--out", p(&dir.path().join("y"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    // A snapshot the transcript never saw: pipeline abort.
    let snap = dir.path().join("snap");
    assert_eq!(code(&run(&["capture-ood", "--seed", "9", "--out", p(&snap)])), 0);
    let o = run(&["generate", "--snapshot", p(&snap), "--transcript", p(&transcript), "--out", p(&dir.path().join("z"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("unrecorded prompt"), "{}", stderr(&o));
    assert!(dir.path().join("z/transcript.jsonl").exists());
}

#[test]
fn retrain_evaluate_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let orig = dir.path().join("orig");
    assert_eq!(code(&tiny(&["train-original", "--total-steps", "0", "--out", p(&orig)])), 0);
    let ckpt = orig.join("best.ckpt");
    let progs = fixture("cartpole");
    let programs = dir.path().join("programs");
    let o = run(&[
        "generate", "--snapshot", p(&progs), "--transcript", p(&progs.join("transcript.jsonl")), "--out", p(&programs),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let out = dir.path().join("retrain");
    let o = tiny(&[
        "retrain", "--checkpoint", p(&ckpt), "--programs", p(&programs), "--out", p(&out), "--total-steps", "200",
        "--checkpoint-interval", "100",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["curve.csv", "curve.json", "agent.ckpt", "manifest.json", "checkpoints/step_00000100.ckpt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["lambda"], 0.05);
    assert!(manifest["inputs"]["eval_program"].is_string());

    let export = dir.path().join("export.csv");
    let o = run(&["export-curve", "--run", p(&out), "--out", p(&export)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&export).unwrap(), std::fs::read(out.join("curve.csv")).unwrap());

    let report = dir.path().join("report.json");
    let o = run(&[
        "evaluate", "--checkpoint", p(&out.join("agent.ckpt")), "--mode", "ood", "-n", "2", "--programs", p(&programs),
        "--out", p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["report"]["episodes"].as_array().unwrap().len(), 2);
    assert!(r["success_rate"].is_number());

    let o = run(&["evaluate", "--checkpoint", p(&ckpt), "-n", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["report"]["episodes"].as_array().unwrap().len(), 0);

    // Wrong environment, then wrong dimensions with the env tag removed.
    let o = run(&["evaluate", "--env", "flipbot", "--checkpoint", p(&ckpt), "-n", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("trained on `cartpole`"), "{}", stderr(&o));
    let untagged = dir.path().join("untagged.ckpt");
    let text = std::fs::read_to_string(&ckpt).unwrap();
    let text: String = text.lines().filter(|l| !l.starts_with("meta env")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&untagged, text).unwrap();
    let o = run(&["evaluate", "--env", "flipbot", "--checkpoint", p(&untagged), "-n", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("produces 1 action dims"), "{}", stderr(&o));
}
