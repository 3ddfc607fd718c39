use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn alps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alps"))
        .args(args)
        .env("ALPS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn solve_config(eta: &str, extra: &str) -> String {
    format!(
        "seed = 1\n[model]\nkind = \"mixture\"\nweights = [0.5, 0.5]\nmeans = [[-1.0, 0.0], [1.0, 0.0]]\nvariance = 0.1\n\
         [operator]\nkind = \"dense\"\nmatrix = [[0.0, 1.0]]\n\
         [measurement]\neta = {eta}\ny = [0.0]\n[solver]\nchains = 1\n{extra}"
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn nonpositive_eta_fails_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    for eta in ["0.0", "-0.1"] {
        let cfg = write(dir.path(), "bad.toml", &solve_config(eta, ""));
        let out = dir.path().join(format!("out{eta}"));
        let o = alps(&["solve", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(String::from_utf8_lossy(&o.stderr).contains("measurement.eta"));
        assert!(!out.exists());
    }
}

#[test]
fn unknown_keys_and_missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "typo.toml",
        &solve_config("0.1", "chians = 4\n"),
    );
    let o = alps(&[
        "solve",
        &cfg,
        "--out",
        dir.path().join("o1").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("chians"));

    let o = alps(&[
        "solve",
        dir.path().join("missing.toml").to_str().unwrap(),
        "--out",
        "unused",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!Path::new("unused").exists());
}

#[test]
fn solve_writes_manifest_with_nfe_and_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ok.toml", &solve_config("0.3", ""));
    let out = dir.path().join("out");
    let o = alps(&["solve", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["nfe"]["per_chain"], 50);
    assert_eq!(manifest["subcommand"], "solve");
    for entry in manifest["outputs"].as_array().unwrap() {
        let bytes = fs::read(out.join(entry["path"].as_str().unwrap())).unwrap();
        assert_eq!(entry["sha256"], alps::manifest::sha256_hex(&bytes));
    }
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 50);
    assert!(out.join("timing.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["samples"].as_array().unwrap().len(), 1);
}

#[test]
fn trained_checkpoint_feeds_the_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(
        dir.path(),
        "train.toml",
        "[data]\nkind = \"moons\"\nn = 64\n[network]\nhidden = [6]\n[train]\nbatch_size = 8\nsteps = 3\n",
    );
    let model_dir = dir.path().join("model");
    assert!(
        alps(&["train-ebm", &train, "--out", model_dir.to_str().unwrap()])
            .status
            .success()
    );
    let log = fs::read_to_string(model_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss"));
    assert_eq!(log.lines().count(), 4);

    let sample = write(
        dir.path(),
        "sample.toml",
        "samples = 3\n[model]\nkind = \"neural\"\ncheckpoint = \"model/model.alpsm\"\n[schedule]\nsteps = 5\n",
    );
    let out = dir.path().join("samples");
    let o = alps(&["sample-prior", &sample, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = alps::format::load_field(&out.join("samples.alpsf")).unwrap();
    assert_eq!(f.shape(), &[3, 2]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["nfe"]["per_chain"], 2 * 5 - 3);
}

#[test]
fn diagnose_ood_reports_auc() {
    let dir = tempfile::tempdir().unwrap();
    let inside =
        alps_core::Field::new(&[4, 2], vec![-1.0, 0.0, 1.0, 0.0, -1.1, 0.1, 0.9, -0.1]).unwrap();
    let outside = alps_core::Field::new(&[3, 2], vec![5.0, 5.0, -6.0, 4.0, 0.0, 7.0]).unwrap();
    alps::format::save_field(&dir.path().join("in.alpsf"), &inside).unwrap();
    alps::format::save_field(&dir.path().join("out.alpsf"), &outside).unwrap();
    let cfg = write(
        dir.path(),
        "ood.toml",
        "t_eval = 0.1\nbins = 5\n[model]\nkind = \"mixture\"\nweights = [0.5, 0.5]\nmeans = [[-1.0, 0.0], [1.0, 0.0]]\n\
         variance = 0.1\n[task]\nkind = \"ood\"\nin_file = \"in.alpsf\"\nout_file = \"out.alpsf\"\n",
    );
    let out = dir.path().join("diag");
    let o = alps(&["diagnose", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("ood.json")).unwrap()).unwrap();
    assert_eq!(report["auc"], 1.0);
    assert_eq!(
        fs::read_to_string(out.join("histogram.csv"))
            .unwrap()
            .lines()
            .count(),
        6
    );
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "o.toml", "scenario = \"no-such-scenario\"\n");
    let o = alps(&[
        "oracle-check",
        &cfg,
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
