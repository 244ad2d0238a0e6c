use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const QUICK: &str = r#"{
    "restarts": 1,
    "max_iterations": 100,
    "decoder": { "hidden_sizes": [8, 4], "max_epochs": 5, "batch_size": 64 }
}"#;

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ctxembed"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs");
    out
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

struct Corpus {
    dir: TempDir,
    csv: PathBuf,
    config: PathBuf,
}

fn corpus(seed: &str) -> Corpus {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth", "--output-dir", s(&data), "--users", "60", "--versions", "8", "--champions", "12", "--rank", "3",
        "--seed", seed,
    ]);
    let config = dir.path().join("quick.json");
    fs::write(&config, QUICK).unwrap();
    Corpus {
        csv: data.join("matches.csv"),
        dir,
        config,
    }
}

fn factorize(c: &Corpus, out: &Path, extra: &[&str]) {
    let mut args = vec!["factorize", "--input", s(&c.csv), "--output-dir", s(out), "--config", s(&c.config)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn pipeline_produces_an_auc_report() {
    let c = corpus("1");
    let root = c.dir.path();
    let (factors, models, eval) = (root.join("factors"), root.join("models"), root.join("eval"));
    factorize(&c, &factors, &["--rank", "6"]);
    for name in ["U.csv", "T.csv", "F.csv", "factors.json", "effective_config.json"] {
        assert!(factors.join(name).is_file(), "{name}");
    }
    assert_eq!(json(&factors.join("factors.json"))["rank"], 6);
    ok(&[
        "train", "--input", s(&c.csv), "--factors", s(&factors), "--output-dir", s(&models), "--target", "win",
        "--config", s(&c.config),
    ]);
    assert!(models.join("model.json").is_file());
    assert!(models.join("training_log.csv").is_file());
    ok(&[
        "evaluate", "--input", s(&c.csv), "--model", s(&models.join("model.json")), "--factors", s(&factors),
        "--output-dir", s(&eval),
    ]);
    let report = json(&eval.join("report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["mode"], "embedding");
    let auc = rows[0]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn rank_sweep_reports_every_candidate_and_a_choice() {
    let c = corpus("2");
    let out = c.dir.path().join("sweep");
    factorize(&c, &out, &["--rank-sweep", "1..10"]);
    let table = fs::read_to_string(out.join("rank_sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("rank,score,loss,chosen"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let ranks: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ranks, (1..=10).collect::<Vec<_>>());
    let chosen: Vec<usize> = rows.iter().filter(|r| r[3] == "1").map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(chosen.len(), 1);
    assert_eq!(json(&out.join("factors.json"))["rank"], chosen[0]);
}

#[test]
fn baseline_flag_adds_a_baseline_row() {
    let c = corpus("3");
    let root = c.dir.path();
    let (factors, models, eval) = (root.join("factors"), root.join("models"), root.join("eval"));
    factorize(&c, &factors, &["--rank", "3"]);
    ok(&["train", "--input", s(&c.csv), "--factors", s(&factors), "--output-dir", s(&models), "--config", s(&c.config)]);
    ok(&["train", "--input", s(&c.csv), "--baseline", "--output-dir", s(&models), "--config", s(&c.config)]);
    assert!(models.join("model_baseline.json").is_file());
    ok(&[
        "evaluate", "--input", s(&c.csv), "--model", s(&models.join("model.json")), "--factors", s(&factors),
        "--output-dir", s(&eval), "--baseline",
    ]);
    let report = json(&eval.join("report.json"));
    let modes: Vec<&str> = report["rows"].as_array().unwrap().iter().map(|r| r["mode"].as_str().unwrap()).collect();
    assert_eq!(modes, ["embedding", "baseline"]);
}

#[test]
fn failures_exit_nonzero_and_leave_no_outputs() {
    let c = corpus("4");
    let root = c.dir.path();
    let out = root.join("models");
    let r = run(&["train", "--input", s(&c.csv), "--output-dir", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("--factors is required"));
    assert!(!out.exists());

    let broken = root.join("broken.csv");
    fs::write(&broken, "not,a,match,file\n1,2,3,4\n").unwrap();
    let out = root.join("factors");
    let r = run(&["factorize", "--input", s(&broken), "--output-dir", s(&out), "--rank", "2"]);
    assert!(!r.status.success());
    assert!(!out.exists());
    let leftovers: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with('.'))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn reruns_are_byte_identical() {
    let c = corpus("5");
    let root = c.dir.path();
    let again = root.join("again");
    ok(&["synth", "--output-dir", s(&again), "--users", "60", "--versions", "8", "--champions", "12", "--rank", "3", "--seed", "5"]);
    assert_eq!(fs::read(&c.csv).unwrap(), fs::read(again.join("matches.csv")).unwrap());

    let (a, b) = (root.join("fa"), root.join("fb"));
    factorize(&c, &a, &["--rank", "3"]);
    factorize(&c, &b, &["--rank", "3"]);
    for name in ["U.csv", "T.csv", "F.csv", "factors.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let (ma, mb) = (root.join("ma"), root.join("mb"));
    for m in [&ma, &mb] {
        ok(&["train", "--input", s(&c.csv), "--factors", s(&a), "--output-dir", s(m), "--config", s(&c.config)]);
    }
    assert_eq!(fs::read(ma.join("model.json")).unwrap(), fs::read(mb.join("model.json")).unwrap());
}

#[test]
fn effective_config_records_version_and_flag_overrides() {
    let c = corpus("6");
    let root = c.dir.path();
    let synth = json(&root.join("data").join("effective_config.json"));
    assert_eq!(synth["tool"], "ctxembed");
    assert_eq!(synth["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(synth["command"], "synth");
    assert_eq!(synth["config"]["n_users"], 60);
    assert_eq!(synth["config"]["seed"], 6);

    let factors = root.join("factors");
    factorize(&c, &factors, &["--rank", "2", "--seed", "9"]);
    let eff = json(&factors.join("effective_config.json"));
    assert_eq!(eff["config"]["rank"], 2);
    assert_eq!(eff["config"]["restarts"], 1);
    assert_eq!(eff["config"]["seed"], 9);
    assert_eq!(eff["config"]["split"]["seed"], 9);

    let models = root.join("models");
    ok(&[
        "train", "--input", s(&c.csv), "--factors", s(&factors), "--output-dir", s(&models), "--config", s(&c.config),
        "--dropout", "0.1",
    ]);
    let eff = json(&models.join("effective_config.json"));
    assert_eq!(eff["config"]["decoder"]["dropout"], 0.1);
    assert_eq!(eff["config"]["decoder"]["max_epochs"], 5);
    assert_eq!(eff["config"]["rank"], 2);
}
