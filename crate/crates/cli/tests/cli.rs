use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lls-qaoa"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn evaluate_writes_bundle_and_report_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config("moderate_qaoa_p2.toml");
    let o = run(&["evaluate", "--config", cfg.to_str().unwrap(), "--out-dir", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("of bound"));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("evaluation.json")).unwrap()).unwrap();
    assert!(v["fidelity_over_bound"].as_f64().unwrap() > 0.99);

    let o = run(&["report", "--out-dir", out]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("evaluation.json [ok]"));
}

#[test]
fn seed_and_threads_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("moderate_optimize_p2.toml");
    let o = run(&[
        "optimize",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--seed",
        "3",
        "--threads",
        "2",
        "--strict",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert_eq!(m["threads"], 2);
}

#[test]
fn bad_config_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "name = \"x\"\nkind = \"evaluate\"\n[system]\npreset = \"moderate\"\n[problem]\nlayers = 2\nnu_hz = -1.0\n[schedule]\ngammas_ms = [1.0, 1.0]\nbetas_ms = [1.0, 1.0]\n").unwrap();
    let o = run(&["evaluate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nu_hz"));
}

#[test]
fn verb_kind_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("moderate_qaoa_p2.toml");
    let o = run(&["heatmap", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grow.toml");
    fs::write(&cfg, "name = \"grow\"\nkind = \"fit_decay\"\n[decay]\ntimes_s = [0.0, 1.0, 2.0]\namplitudes = [1.0, 2.0, 4.0]\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&["fit-decay", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(fs::read_dir(&out).map(|d| d.count()).unwrap_or(0), 0);
}

#[test]
fn strict_flags_unconverged_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(
        &cfg,
        "name = \"short\"\nkind = \"optimize\"\n[system]\npreset = \"moderate\"\n[problem]\nlayers = 2\nnu_hz = 100.0\n[optimizer]\nn_starts = 1\nmax_evals = 10\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let args = ["optimize", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    assert!(run(&args).status.success());
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(run(&strict).status.code(), Some(4));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["baseline", "--config", "/nonexistent.toml", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
