use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lls_qaoa::experiment::{report, run_config, EvaluationReport, Manifest, MANIFEST};
use lls_qaoa::*;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(name: &str, out: &Path) -> RunSummary {
    run_experiment(&configs().join(name), out, &RunOptions::default()).unwrap()
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn every_bundled_config_validates() {
    let mut n = 0;
    for entry in fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let (cfg, _) = ExperimentConfig::load(&p).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert!(cfg.kind.is_some(), "{}", p.display());
            n += 1;
        }
    }
    assert!(n >= 15);
}

#[test]
fn table_ii_evaluation_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let s = run("moderate_qaoa_p2.toml", dir.path());
    let text = fs::read_to_string(dir.path().join("evaluation.json")).unwrap();
    let r: EvaluationReport = serde_json::from_str(&text).unwrap();
    assert!(r.fidelity_over_bound >= 0.99);
    assert!((r.total_time_ms - 24.356).abs() < 1e-9);
    assert_eq!(s.manifest.outputs.len(), 1);
    assert!(s.lines[0].contains("of bound"));
}

#[test]
fn reruns_are_byte_identical() {
    for name in ["moderate_optimize_p2.toml", "trajectory.toml", "decay_example.toml", "baseline_apsoc.toml"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run(name, a.path());
        run(name, b.path());
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
        for (k, v) in &fa {
            if k != MANIFEST {
                assert!(v == &fb[k], "{name}: {k} differs between reruns");
            }
        }
        let ma: Manifest = serde_json::from_slice(&fa[MANIFEST]).unwrap();
        let mb: Manifest = serde_json::from_slice(&fb[MANIFEST]).unwrap();
        assert_eq!(ma.outputs, mb.outputs);
        assert_eq!(ma.config_sha256, mb.config_sha256);
    }
}

#[test]
fn seed_override_changes_only_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        seed: Some(5),
        ..Default::default()
    };
    let s = run_experiment(&configs().join("moderate_optimize_p2.toml"), dir.path(), &opts).unwrap();
    assert_eq!(s.manifest.seed, 5);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(v["seed"], 5);
}

#[test]
fn small_heatmap_bundle_shape() {
    let (mut cfg, text) = ExperimentConfig::load(configs().join("fig2_moderate.toml")).unwrap();
    let g = cfg.grid.as_mut().unwrap();
    g.nu_points = 3;
    g.delta_points = 2;
    let o = cfg.optimizer.as_mut().unwrap();
    o.n_starts = Some(1);
    o.max_evals = Some(100);
    let dir = tempfile::tempdir().unwrap();
    let s = run_config(cfg, &text, &configs(), dir.path(), &RunOptions::default()).unwrap();
    let csv = fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "nu_hz,delta_hz,fidelity,converged");
    assert_eq!(lines.len(), 7);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
    let side: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("heatmap.json")).unwrap()).unwrap();
    assert_eq!(side["n_nu"], 3);
    assert_eq!(side["n_delta"], 2);
    assert_eq!(side["kind"], "reoptimize");
    let names: Vec<_> = s.manifest.outputs.iter().map(|o| o.file.as_str()).collect();
    assert_eq!(names, ["heatmap.csv", "heatmap.json"]);
}

#[test]
fn trajectory_bundle() {
    let dir = tempfile::tempdir().unwrap();
    run("trajectory.toml", dir.path());
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 6, "{header}");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len() % 3, 0);
    // the pure start sits on the T0 pole of the S0-T0 sphere
    assert_eq!(rows[0][1], "S0-T0");
    let z: f64 = rows[0][4].parse().unwrap();
    assert!((z + 1.0).abs() < 1e-12);
    // every normalized Bloch vector stays inside the unit ball
    for r in &rows {
        let v: Vec<f64> = r[2..5].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().map(|x| x * x).sum::<f64>() <= 1.0 + 1e-9);
    }
    let final_f: f64 = rows.last().unwrap()[5].parse().unwrap();
    assert!(final_f > 0.99, "{final_f}");
}

#[test]
fn search_streams_rows_in_grid_order() {
    let text = r#"
name = "tiny_slic"
kind = "search"
[system]
preset = "moderate"
[baseline]
phase = "preparation"
[baseline.params]
method = "slic"
nu_hz = 25.3
tau_p = 0.0215
[search]
threshold = 0.0
[[search.axes]]
name = "nu_hz"
min = 24.0
max = 26.0
step = 1.0
[[search.axes]]
name = "tau_p"
min = 0.020
max = 0.022
step = 0.001
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_config(cfg, text, dir.path(), dir.path(), &RunOptions::default()).unwrap();
    let csv = fs::read_to_string(dir.path().join("search.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 10);
    assert!(rows[1].starts_with("2.4000000000000000e1,2.0000000000000000e-2"), "{}", rows[1]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("search.json")).unwrap()).unwrap();
    assert_eq!(v["n_points"], 9);
}

#[test]
fn malformed_configs_name_the_key() {
    let cases = [
        ("name = \"x\"\nkind = \"evaluate\"\nbogus = 1\n", "bogus"),
        ("name = \"x\"\nkind = \"evaluate\"\n[system]\npreset = \"moderate\"\n[problem]\nlayers = \"two\"\nnu_hz = 1.0\n", "layers"),
        ("name = \"x\"\nkind = \"evaluate\"\n[system]\npreset = \"nope\"\n[problem]\nlayers = 2\nnu_hz = 1.0\n[schedule]\ngammas_ms = [1.0, 1.0]\nbetas_ms = [1.0, 1.0]\n", "system.preset"),
        ("name = \"x\"\nkind = \"evaluate\"\n[system]\npreset = \"moderate\"\n[problem]\nlayers = 2\nnu_hz = -3.0\n[schedule]\ngammas_ms = [1.0]\nbetas_ms = [1.0, 1.0]\n", "nu_hz"),
    ];
    for (text, key) in cases {
        let err = ExperimentConfig::from_toml(text).and_then(|c| c.validate()).unwrap_err();
        assert!(err.is_validation(), "{err}");
        assert!(err.to_string().contains(key), "expected `{key}` in: {err}");
    }
}

#[test]
fn validation_reports_every_problem_at_once() {
    let text = "name = \"x\"\nkind = \"evaluate\"\n[system]\npreset = \"moderate\"\n[problem]\nlayers = 2\nnu_hz = -3.0\nr = 2.0\n[schedule]\ngammas_ms = [1.0]\nbetas_ms = [1.0, 1.0]\n";
    let err = ExperimentConfig::from_toml(text).unwrap().validate().unwrap_err().to_string();
    for key in ["nu_hz", "r", "gammas_ms"] {
        assert!(err.contains(key), "missing `{key}` in: {err}");
    }
}

#[test]
fn failed_run_leaves_earlier_bundle_untouched() {
    let dir = tempfile::tempdir().unwrap();
    run("moderate_qaoa_p2.toml", dir.path());
    let before = files(dir.path());
    let text = "name = \"moderate_qaoa_p2\"\nkind = \"fit_decay\"\n[decay]\ndata = \"missing.csv\"\n";
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert!(run_config(cfg, text, dir.path(), dir.path(), &RunOptions::default()).is_err());
    assert_eq!(files(dir.path()), before);
}

#[test]
fn report_checks_hashes() {
    let dir = tempfile::tempdir().unwrap();
    run("baseline_cl.toml", dir.path());
    let lines = report(dir.path()).unwrap();
    assert!(lines.iter().any(|l| l.contains("baseline.json [ok]")), "{lines:?}");
    assert!(lines.iter().any(|l| l.trim_start().starts_with("fidelity =")), "{lines:?}");
    fs::write(dir.path().join("baseline.json"), "{}").unwrap();
    let lines = report(dir.path()).unwrap();
    assert!(lines.iter().any(|l| l.contains("MODIFIED")));
    assert!(report(&dir.path().join("nowhere")).is_err());
}

#[test]
fn six_spin_placeholder_runs_with_invariants() {
    for name in ["six_spin_table_s2.toml", "six_spin_table_s3.toml"] {
        let (cfg, _) = ExperimentConfig::load(configs().join(name)).unwrap();
        let spec = cfg.qaoa_spec(&configs()).unwrap();
        let p = QaoaProblem::new(spec).unwrap();
        assert_eq!(p.operators().dim(), 64);
        let s = cfg.schedule.as_ref().unwrap();
        let rho = p.final_state(&s.gammas_s(), &s.betas_s()).unwrap();
        let m = rho.matrix();
        let start = p.start_state().matrix();
        assert!(m.trace().norm() < 1e-10);
        assert!(m.hermiticity_error() < 1e-10);
        assert!((m.norm_sq() - start.norm_sq()).abs() < 1e-10 * start.norm_sq());
        let u = p.schedule(&s.gammas_s(), &s.betas_s()).unwrap().unitary(None).unwrap();
        let err = (&u * u.adjoint() - CMatrix::identity(64, 64)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        let e = p.evaluate(&s.gammas_s(), &s.betas_s()).unwrap();
        assert!(e.fidelity.abs() <= p.bound() + 1e-10);

        let dir = tempfile::tempdir().unwrap();
        run(name, dir.path());
        assert!(dir.path().join("evaluation.json").exists());
    }
}
