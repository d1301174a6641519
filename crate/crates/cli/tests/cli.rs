use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_turbo-gep"));
    for key in ["CONFIG", "SEED", "OUT_DIR", "THREADS", "ARCHIVE", "GIT_REV"] {
        c.env_remove(format!("TURBO_GEP_{key}"));
    }
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stderr_lines(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stderr).lines().map(String::from).collect()
}

const SMALL: &str = "[system]\nsnr_db = [4.0, 8.0]\n[evaluate]\nvectors = 300\n";

#[test]
fn complexity_writes_table() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["complexity", "--out-dir", "out"], d.path());
    assert!(o.status.success());
    let csv = std::fs::read_to_string(d.path().join("out/complexity.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("ep,") && l.ends_with(",9008")));
    assert!(d.path().join("out/complexity.manifest.json").is_file());
}

#[test]
fn evaluate_emits_normative_csv_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), SMALL).unwrap();
    let o = bin()
        .args(["evaluate", "--config", "c.toml", "--out-dir", "out", "--seed", "9"])
        .env("TURBO_GEP_GIT_REV", "testrev")
        .current_dir(d.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("out/evaluate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "snr_db,detector,turbo_iter,ser,ber,wer,n_bits,n_errors,stderr_est,seed,git_rev"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",9,testrev")));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("out/evaluate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["git_rev"], "testrev");
    assert_eq!(manifest["config"]["system"]["snr_db"][1], 8.0);
}

#[test]
fn env_overrides_flags_defaults() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), SMALL).unwrap();
    let o = bin()
        .args(["evaluate"])
        .env("TURBO_GEP_CONFIG", "c.toml")
        .env("TURBO_GEP_OUT_DIR", "envout")
        .env("TURBO_GEP_SEED", "123")
        .env("TURBO_GEP_THREADS", "2")
        .current_dir(d.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let csv = std::fs::read_to_string(d.path().join("envout/evaluate.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(9) == Some("123")));
}

#[test]
fn results_do_not_depend_on_threads() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), SMALL).unwrap();
    for (t, out) in [("1", "a"), ("3", "b")] {
        let o = run(&["evaluate", "--config", "c.toml", "--out-dir", out, "--threads", t], d.path());
        assert!(o.status.success());
    }
    let a = std::fs::read(d.path().join("a/evaluate.csv")).unwrap();
    let b = std::fs::read(d.path().join("b/evaluate.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "[system]\nn_r = \"four\"\n").unwrap();
    let o = run(&["evaluate", "--config", "bad.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_lines(&o).len(), 1);
    let o = run(&["evaluate", "--config", "missing.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(d.path().join("neg.toml"), "[system]\nsnr_db = []\n").unwrap();
    let o = run(&["sweep", "--config", "neg.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_lines(&o).len(), 1);
}

#[test]
fn missing_archive_exits_3() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), "detectors = [\"ext_gepnet\"]\n").unwrap();
    let o = run(&["sweep", "--config", "c.toml", "--out-dir", "o"], d.path());
    assert_eq!(o.status.code(), Some(3));
    let lines = stderr_lines(&o);
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains("ext.gepw"));
    let o = run(&["gen-ext-labels", "--archive", "nowhere.gepw"], d.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn runtime_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("blocker"), "x").unwrap();
    let o = run(&["complexity", "--out-dir", "blocker/sub"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_lines(&o).len(), 1);
}

#[test]
fn three_step_pipeline_runs_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"
detectors = ["ep", "gepnet_app", "ext_gepnet"]
[system]
n_r = 2
n_t = 2
snr_db = [6.0]
[gepnet.gnn]
n_u = 4
n_h1 = 8
n_h2 = 4
rounds = 1
[training]
step1_samples = 32
step2_samples = 16
val_samples = 8
epochs = 2
step3_epochs = 2
batch_size = 8
[turbo]
message_bits = 32
max_words = 4
chunk_words = 2
"#;
    std::fs::write(d.path().join("c.toml"), cfg).unwrap();
    for cmd in ["train-step1", "gen-ext-labels", "train-step3", "sweep"] {
        let o = run(&[cmd, "--config", "c.toml", "--out-dir", "o"], d.path());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["app.gepw", "labels_train.gepd", "labels_val.gepd", "ext.gepw", "sweep.csv", "history_step3.csv"] {
        assert!(d.path().join("o").join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(d.path().join("o/sweep.csv")).unwrap();
    // 3 detectors × 2 iterations
    assert_eq!(csv.lines().count(), 1 + 6);
    // an archive with other GNN sizes is a configuration error
    let other = cfg.replace("n_h1 = 8", "n_h1 = 16").replace("\"ep\", \"gepnet_app\", ", "");
    std::fs::write(d.path().join("c2.toml"), other).unwrap();
    let o = run(&["sweep", "--config", "c2.toml", "--out-dir", "o2", "--archive", "o/ext.gepw"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_lines(&o)[0].contains("msg.0.w") || stderr_lines(&o)[0].contains("gru"), "{:?}", stderr_lines(&o));
}
