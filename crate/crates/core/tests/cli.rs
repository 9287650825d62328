use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mail_core::harness::{ExperimentConfig, PRESETS};
use mail_core::models::N_CODES;
use mail_core::trainers::TrainConfig;
use tempfile::TempDir;

fn mail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mail")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A config small enough for a smoke test.
fn tiny(dir: &Path, preset: &str) -> PathBuf {
    let mut cfg = ExperimentConfig::for_preset(preset).unwrap();
    cfg.demos = dir.join("demos/demos.maildemo");
    cfg.checkpoints = dir.join("ckpt");
    cfg.out = dir.join(preset);
    cfg.train = TrainConfig {
        total_steps: 1024,
        rollout_steps: 512,
        n_envs: 4,
        minibatch: 128,
        disc_minibatch: 128,
        eval_episodes: 3,
        final_eval_episodes: 4,
        bc_epochs: 1,
        posterior_epochs: 2,
        ..cfg.train
    };
    let path = dir.join(format!("{preset}.json"));
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn list_presets_prints_every_row() {
    let o = mail(&["list-presets"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for preset in &PRESETS {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(preset.name)), "{}", preset.name);
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(mail(&["list-presets", "--bogus"]).status.code(), Some(2));
    assert_eq!(mail(&["frobnicate"]).status.code(), Some(2));
    let o = mail(&["train", "--preset", "NOPE", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown preset"));
    let o = mail(&["train", "--preset", "MAIL", "--scheme", "cubic", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema":1,"demos":"d","checkpoints":"c","out":"o","surprise":true}"#).unwrap();
    assert_eq!(mail(&["list-presets", "--config", p(&bad)]).status.code(), Some(2));
}

#[test]
fn train_without_bc_checkpoint_names_it() {
    let dir = TempDir::new().unwrap();
    let demos = dir.path().join("demos");
    assert!(mail(&["gen-demos", "--pairs", "200", "--out", p(&demos)]).status.success());
    let o = mail(&[
        "train",
        "--preset",
        "MAIL",
        "--demos",
        p(&demos.join("demos.maildemo")),
        "--checkpoints",
        p(&dir.path().join("nowhere")),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert!(!o.status.success());
    assert_ne!(o.status.code(), Some(0));
    let err = stderr(&o);
    assert!(err.contains("behavior-cloned encoder checkpoint"), "{err}");
    assert!(err.contains("train-bc"), "{err}");
}

#[test]
fn gen_demos_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(mail(&["gen-demos", "--pairs", "1000", "--seed", "1", "--out", p(out)]).status.success());
    }
    let read = |d: &Path| std::fs::read(d.join("demos.maildemo")).unwrap();
    assert_eq!(read(&a), read(&b));
    let manifest = |d: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap()
    };
    assert_eq!(manifest(&a)["outputs"][0]["hash"], manifest(&b)["outputs"][0]["hash"]);
    assert_eq!(manifest(&a)["seed"], 1);
}

#[test]
fn full_pipeline_smoke() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let mail_cfg = tiny(root, "MAIL");
    let di_cfg = tiny(root, "DI-MAIL");
    let c = |path: &Path| p(path).to_string();

    assert!(mail(&["gen-demos", "--pairs", "2000", "--out", p(&root.join("demos"))]).status.success());
    let o = mail(&["train-bc", "--config", &c(&mail_cfg), "--out", p(&root.join("ckpt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("ckpt/encoder.mailparm").exists());

    let emb = root.join("emb");
    let o = mail(&["export-embeddings", "--config", &c(&mail_cfg), "--states", "120", "--out", p(&emb)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(emb.join("embeddings.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().len(), 5 + 128);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 120);
    assert!(rows.iter().any(|r| &r[1] == "0") && rows.iter().any(|r| &r[1] == "1"));

    let o = mail(&["train", "--config", &c(&mail_cfg), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = root.join("MAIL");
    for f in ["report.csv", "summary.json", "manifest.json", "models/models.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "step,score_mean,score_std,disc_acc,reward_mean");
    assert_eq!(report.lines().count(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["encoder_hash_start"], summary["encoder_hash_end"]);

    let ev = root.join("eval");
    let o = mail(&["eval", "--run", p(&run), "--episodes", "5", "--out", p(&ev)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mail(&["export-code-stats", "--run", p(&run), "--out", p(&root.join("nocodes"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("not a code-conditioned run"));

    let o = mail(&["train-posterior", "--config", &c(&di_cfg), "--out", p(&root.join("ckpt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mail(&["train", "--config", &c(&di_cfg), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let codes_dir = root.join("codes");
    let o = mail(&["export-code-stats", "--run", p(&root.join("DI-MAIL")), "--episodes", "3", "--out", p(&codes_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(codes_dir.join("codes.csv")).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["episode", "timestep", "code"]);
    let mut n = 0;
    for r in rd.records() {
        let code: usize = r.unwrap()[2].parse().unwrap();
        assert!(code < N_CODES);
        n += 1;
    }
    assert!(n > 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(codes_dir.join("summary.json")).unwrap()).unwrap();
    let total: f64 = summary["proportions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let traj = csv::Reader::from_path(codes_dir.join("trajectories.csv")).unwrap().records().count();
    assert_eq!(traj, n);
}

#[test]
fn identical_seeds_give_identical_reports() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let cfg = tiny(root, "VAIL");
    assert!(mail(&["gen-demos", "--pairs", "500", "--out", p(&root.join("demos"))]).status.success());
    let mut reports = Vec::new();
    for out in ["r1", "r2"] {
        let o = mail(&["train", "--config", p(&cfg), "--seed", "3", "--quiet", "--out", p(&root.join(out))]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(std::fs::read(root.join(out).join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}
