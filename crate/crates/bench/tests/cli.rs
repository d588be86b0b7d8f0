use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kisa_bench::{DataSource, ExperimentConfig};

fn smoke_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synth_smoke.toml")
}

fn kisa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kisa")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates the smoke synthetic draw into `dir` and returns the directory.
fn synth_into(dir: &Path) -> PathBuf {
    let DataSource::Synth(cfg) = ExperimentConfig::load(&smoke_path()).unwrap().data else { panic!() };
    let cfg_path = dir.join("synth.toml");
    std::fs::write(&cfg_path, toml::to_string(&cfg).unwrap()).unwrap();
    let data = dir.join("data");
    let o = kisa(&["synth", "--config", s(&cfg_path), "--out", s(&data), "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    data
}

#[test]
fn synth_then_screen_and_divide() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    for f in ["source.csv", "source.schema.toml", "target_train.csv", "target_test.schema.toml"] {
        assert!(data.join(f).is_file(), "{f}");
    }

    let o = kisa(&["screen", "--data", s(&data.join("source.csv")), "--knowledge", "hour"]);
    assert_eq!(code(&o), 0);
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["knowledge"], "hour");

    let out = dir.path().join("div");
    let o = kisa(&[
        "divide",
        "--data",
        s(&data.join("source.csv")),
        "--target",
        s(&data.join("target_train.csv")),
        "--knowledge",
        "day",
        "--method",
        "graph",
        "--subdomains",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 2);
    let assignments = std::fs::read_to_string(out.join("assignments.csv")).unwrap();
    assert!(assignments.starts_with("domain,sample_index,subdomain\n"));
    assert!(out.join("divergence.csv").is_file() && out.join("match.csv").is_file());
}

#[test]
fn train_then_dump_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let run = dir.path().join("run");
    let o = kisa(&["train", "--config", s(&smoke_path()), "--method", "kisa_full", "--seed", "1", "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(metrics["metrics"]["auc"].is_number());
    assert_eq!(std::fs::read_to_string(run.join("report.jsonl")).unwrap().lines().count(), 2);

    let standardizer = run.join("standardizer_seed1.json");
    let test = data.join("target_test.csv");
    let n = std::fs::read_to_string(&test).unwrap().lines().count() - 1;
    for model in ["models/kisa_single-hour_seed1.kisa", "models/kisa_full_seed1.fusion.toml"] {
        let out = dir.path().join("z.csv");
        let o = kisa(&[
            "dump-embeddings",
            "--model",
            s(&run.join(model)),
            "--data",
            s(&test),
            "--standardizer",
            s(&standardizer),
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{model}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), n + 1);
    }

    let o = kisa(&[
        "divide",
        "--data",
        s(&test),
        "--model",
        s(&run.join("models/kisa_single-day_seed1.kisa")),
        "--standardizer",
        s(&standardizer),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_prints_the_aggregate_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = kisa(&["bench", "--config", s(&smoke_path()), "--seed", "0", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.starts_with("method,metric,mean,std,runs\n"));
    assert!(text.contains("kisa_full,auc,"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&kisa(&["bench", "--config", s(&dir.path().join("missing.toml"))])), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "methods = [\"target_only\"]\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&kisa(&["bench", "--config", s(&bad)])), 2);

    let o = kisa(&["train", "--config", s(&smoke_path()), "--method", "kisa_single:nope", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);

    let o = kisa(&["divide", "--data", s(&dir.path().join("none.csv")), "--knowledge", "hour", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);

    // argument parsing errors come from clap, which also exits with 2
    assert_eq!(code(&kisa(&["bench"])), 2);
}

#[test]
fn malformed_data_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let csv = data.join("source.csv");
    let mut text = std::fs::read_to_string(&csv).unwrap();
    text.push_str("not,a,number\n");
    std::fs::write(&csv, text).unwrap();
    let o = kisa(&["screen", "--data", s(&csv)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}
