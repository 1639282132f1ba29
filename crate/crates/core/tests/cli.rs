use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_mimo-jcd");

#[test]
fn flops_subcommand() {
    let out = Command::new(BIN).args(["flops", "--nr", "4", "--nt", "4", "--k", "128", "--p", "8"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("mjcd")));
    assert!(text.lines().any(|l| l.starts_with("ojcd")));
    let bad = Command::new(BIN).args(["flops", "--nr", "4", "--nt", "4", "--k", "8", "--p", "8"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn simulate_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "trials = 2\nseed = 5\n\n[system]\nn_r = 2\nn_t = 2\nsubcarriers = 16\npilots = 4\nsnr_db = [10.0]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--layers", "3", "--estimator", "mjcd"])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(csv.contains(",mjcd,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["jcd"]["layers"], 3);
}

#[test]
fn simulate_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "trials = 1\nmystery = 2\n[system]\nsnr_db = [1.0]\n").unwrap();
    let out = Command::new(BIN).args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn example_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let spec = mimo_jcd::harness::ExperimentSpec::from_file(&path).unwrap();
            spec.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
