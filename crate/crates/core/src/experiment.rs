//! Config-driven runs that write a reproducible result bundle.
//!
//! Outputs are first written to a staging directory inside the output
//! directory and moved into place only when the whole run succeeded, so a
//! failed run leaves no partial files behind. Every bundle ends with
//! `manifest.json` holding the config hash, seed, crate version, wall time
//! and a SHA-256 of each output. All other files are byte-identical between
//! reruns of the same config and seed.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{brute_force_search, build, BaselineContext, BaselineParams, Phase, SearchRow};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::decay::{fit_exponential_decay_with, DecayFit};
use crate::error::{Error, Result};
use crate::output::{fmt_float, fmt_ms, sha256_hex, write_json};
use crate::propagation::{run_schedule, trajectory_points, write_trajectory_csv, PulseSchedule, TrajectoryProbe};
use crate::qaoa::{optimize, OptimRecord, OptimResult, QaoaProblem};
use crate::spin::{product_ket, singlet_triplet_basis, DeviationState};
use crate::sweep::{heatmap, robustness_map, total_protocol_map, HeatmapResult, SweepGrid, SweepMode};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replaces the config's seed.
    pub seed: Option<u64>,
    /// Replaces the config's kind; the CLI verb sets this.
    pub kind: Option<ExperimentKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: ExperimentKind,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    pub outputs: Vec<OutputEntry>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Human-readable result lines.
    pub lines: Vec<String>,
}

/// Loads, validates and runs a config file. Relative paths inside the
/// config resolve against the config's directory.
pub fn run_experiment(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let (cfg, text) = ExperimentConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    run_config(cfg, &text, base, out_dir, opts)
}

pub fn run_config(
    mut cfg: ExperimentConfig,
    config_text: &str,
    base_dir: &Path,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunSummary> {
    if let Some(kind) = opts.kind {
        if let Some(own) = cfg.kind {
            if own != kind {
                return Err(Error::validation(
                    "kind",
                    format!("config is a `{}` run, not `{}`", own.name(), kind.name()),
                ));
            }
        }
        cfg.kind = Some(kind);
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let kind = cfg.kind()?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let staging = out_dir.join(format!(".staging-{}", cfg.name));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;

    let start = Instant::now();
    let result = dispatch(&cfg, kind, base_dir, &staging);
    let (files, converged, lines) = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    let finish = || -> Result<Manifest> {
        let mut outputs = Vec::new();
        for f in &files {
            let bytes = fs::read(staging.join(f)).map_err(|e| Error::io(staging.join(f), e))?;
            outputs.push(OutputEntry {
                file: f.clone(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            name: cfg.name.clone(),
            kind,
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            wall_time_s: start.elapsed().as_secs_f64(),
            converged,
            outputs,
        };
        write_json(staging.join(MANIFEST), &manifest)?;
        for f in files.iter().map(String::as_str).chain([MANIFEST]) {
            let to = out_dir.join(f);
            fs::rename(staging.join(f), &to).map_err(|e| Error::io(&to, e))?;
        }
        fs::remove_dir(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(manifest)
    };
    match finish() {
        Ok(manifest) => Ok(RunSummary {
            out_dir: out_dir.to_path_buf(),
            manifest,
            lines,
        }),
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

type Outcome = (Vec<String>, bool, Vec<String>);

fn dispatch(cfg: &ExperimentConfig, kind: ExperimentKind, base: &Path, dir: &Path) -> Result<Outcome> {
    match kind {
        ExperimentKind::Optimize => run_optimize(cfg, base, dir),
        ExperimentKind::Evaluate => run_evaluate(cfg, base, dir),
        ExperimentKind::Heatmap => run_heatmap(cfg, base, dir),
        ExperimentKind::Robustness => run_robustness(cfg, base, dir),
        ExperimentKind::TotalProtocol => run_total(cfg, base, dir),
        ExperimentKind::Trajectory => run_trajectory(cfg, base, dir),
        ExperimentKind::Baseline => run_baseline(cfg, dir),
        ExperimentKind::Search => run_search(cfg, dir),
        ExperimentKind::FitDecay => run_fit_decay(cfg, base, dir),
    }
}

fn schedule_of(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| Error::validation("schedule", "section is required"))?;
    Ok((s.gammas_s(), s.betas_s()))
}

fn reference(problem: &QaoaProblem, gammas: Vec<f64>, betas: Vec<f64>, seed: u64) -> Result<OptimResult> {
    let e = problem.evaluate(&gammas, &betas)?;
    Ok(OptimResult {
        gammas,
        betas,
        fidelity: e.fidelity,
        total_time: e.total_time,
        cost: e.cost,
        n_evals: 0,
        converged: true,
        seed,
        start_index: 0,
        bound: problem.bound(),
    })
}

fn ratio_line(label: &str, fidelity: f64, bound: f64) -> String {
    format!("{label}: fidelity {fidelity:.6} ({:.4} of bound {bound:.6})", fidelity / bound)
}

fn run_optimize(cfg: &ExperimentConfig, base: &Path, dir: &Path) -> Result<Outcome> {
    let problem = QaoaProblem::new(cfg.qaoa_spec(base)?)?;
    let r = optimize(&problem, &cfg.optimizer_settings())?;
    let rec = r.record(&problem);
    write_json(dir.join("result.json"), &rec)?;
    write_schedule_csv(&dir.join("schedule.csv"), &rec)?;
    let lines = vec![
        ratio_line("optimized", r.fidelity, r.bound),
        format!(
            "total time {} ms, cost {:.6}, {} evaluations, converged {}",
            fmt_ms(r.total_time),
            r.cost,
            r.n_evals,
            r.converged
        ),
    ];
    Ok((vec!["result.json".into(), "schedule.csv".into()], r.converged, lines))
}

fn write_schedule_csv(path: &Path, rec: &OptimRecord) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["layer", "gamma_ms", "beta_ms"])?;
    for (i, (g, b)) in rec.gammas_ms.iter().zip(&rec.betas_ms).enumerate() {
        w.write_record([(i + 1).to_string(), fmt_float(*g), fmt_float(*b)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Result file of an `evaluate` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub problem_hash: String,
    pub n_spins: usize,
    pub layers: usize,
    pub nu_hz: f64,
    pub delta_off_hz: f64,
    pub gammas_ms: Vec<f64>,
    pub betas_ms: Vec<f64>,
    pub fidelity: f64,
    pub unitary_bound: f64,
    pub fidelity_over_bound: f64,
    pub total_time_ms: f64,
    pub cost: f64,
}

fn run_evaluate(cfg: &ExperimentConfig, base: &Path, dir: &Path) -> Result<Outcome> {
    let problem = QaoaProblem::new(cfg.qaoa_spec(base)?)?;
    let (g, b) = schedule_of(cfg)?;
    let e = problem.evaluate(&g, &b)?;
    let s = cfg.schedule.as_ref().expect("checked by schedule_of");
    let report = EvaluationReport {
        problem_hash: problem.hash(),
        n_spins: problem.operators().n_spins(),
        layers: problem.layers(),
        nu_hz: problem.ctrl().nu_hz,
        delta_off_hz: problem.ctrl().delta_off_hz,
        gammas_ms: s.gammas_ms.clone(),
        betas_ms: s.betas_ms.clone(),
        fidelity: e.fidelity,
        unitary_bound: problem.bound(),
        fidelity_over_bound: e.fidelity / problem.bound(),
        total_time_ms: e.total_time * 1e3,
        cost: e.cost,
    };
    write_json(dir.join("evaluation.json"), &report)?;
    let lines = vec![
        ratio_line("evaluated", e.fidelity, problem.bound()),
        format!("total time {} ms, cost {:.6}", fmt_ms(e.total_time), e.cost),
    ];
    Ok((vec!["evaluation.json".into()], true, lines))
}

fn map_outcome(h: &HeatmapResult, stem: &str, dir: &Path) -> Result<Outcome> {
    h.write_files(dir, stem)?;
    let all = h.converged.iter().flatten().all(|&c| c);
    let b = h.best_point;
    let lines = vec![
        format!(
            "{}x{} {} map, best {:.6} ({:.4} of bound) at nu {:.3} Hz, delta {:.3} Hz",
            h.nu_hz.len(),
            h.delta_hz.len(),
            h.kind,
            b.fidelity,
            b.fidelity / h.bound,
            b.nu_hz,
            b.delta_hz
        ),
        format!("wall time {:.1} s, failed cells {}", h.wall_time_s, h.failures.len()),
    ];
    Ok((vec![format!("{stem}.csv"), format!("{stem}.json")], all, lines))
}

fn grid_of(cfg: &ExperimentConfig, mode: SweepMode) -> SweepGrid {
    match &cfg.grid {
        Some(g) => g.sweep_grid(mode),
        None => SweepGrid {
            mode,
            ..SweepGrid::default()
        },
    }
}

fn run_heatmap(cfg: &ExperimentConfig, base: &Path, dir: &Path) -> Result<Outcome> {
    let problem = QaoaProblem::new(cfg.qaoa_spec(base)?)?;
    let h = heatmap(&problem, &grid_of(cfg, SweepMode::Reoptimize), &cfg.sweep_settings())?;
    map_outcome(&h, "heatmap", dir)
}

fn run_robustness(cfg: &ExperimentConfig, base: &Path, dir: &Path) -> Result<Outcome> {
    let problem = QaoaProblem::new(cfg.qaoa_spec(base)?)?;
    let (g, b) = schedule_of(cfg)?;
    let r = reference(&problem, g, b, cfg.seed)?;
    let h = robustness_map(&problem, &r, &grid_of(cfg, SweepMode::FixedSchedule))?;
    map_outcome(&h, "robustness", dir)
}

fn run_total(cfg: &ExperimentConfig, base: &Path, dir: &Path) -> Result<Outcome> {
    let prep = QaoaProblem::new(cfg.qaoa_spec(base)?)?;
    let (g, b) = schedule_of(cfg)?;
    let prep_ref = reference(&prep, g, b, cfg.seed)?;
    let d = cfg
        .detection
        .as_ref()
        .ok_or_else(|| Error::validation("detection", "section is required"))?;
    let det_spec = d.problem.spec(cfg.system()?, base)?;
    let det = QaoaProblem::with_operators(det_spec, Arc::clone(prep.operators()))?;
    let det_ref = reference(&det, d.schedule.gammas_s(), d.schedule.betas_s(), cfg.seed)?;
    let h = total_protocol_map(&prep, &prep_ref, &det, &det_ref, &grid_of(cfg, SweepMode::FixedSchedule))?;
    map_outcome(&h, "total_protocol", dir)
}

/// Result file of a `trajectory` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub n_samples: usize,
    pub spheres: Vec<String>,
    pub final_fidelity: f64,
    pub total_time_ms: f64,
}

fn run_trajectory(cfg: &ExperimentConfig, base: &Path, dir: &Path) -> Result<Outcome> {
    let problem = QaoaProblem::new(cfg.qaoa_spec(base)?)?;
    let (g, b) = schedule_of(cfg)?;
    let t = cfg.trajectory.clone().unwrap_or(crate::config::TrajectoryConfig {
        steps_per_segment: None,
        every_ms: None,
        pair: [1, 2],
        partners: vec!["S0-T0".into(), "S0-T+".into(), "S0-T-".into()],
        background: None,
        initial_ket: None,
    });
    let pair = (t.pair[0].max(1) - 1, t.pair[1].max(1) - 1);
    let (start, background) = match &t.initial_ket {
        Some(spec) => {
            let ket = product_ket(spec)?;
            if ket.len() != problem.operators().dim() {
                return Err(Error::validation(
                    "trajectory.initial_ket",
                    format!("`{spec}` has {} spins, the system {}", spec.chars().count(), problem.operators().n_spins()),
                ));
            }
            let (state, bg) = DeviationState::from_pure_ket(&ket, format!("|{spec}>"))?;
            (state, Some(t.background.unwrap_or(bg)))
        }
        None => (problem.start_state().clone(), t.background),
    };
    let probe = TrajectoryProbe {
        basis: singlet_triplet_basis(pair, problem.operators().n_spins())?,
        partners: t.partners()?,
        background,
    };
    // Layers only; the trajectory starts after any initialization pulse.
    let mut schedule = PulseSchedule::new(problem.operators().n_spins());
    for (&gi, &bi) in g.iter().zip(&b) {
        schedule.push_segment(Arc::clone(problem.h_a()), gi)?;
        schedule.push_segment(Arc::clone(problem.h_b()), bi)?;
    }
    let out = run_schedule(&start, &schedule, Some(t.recording()), None)?;
    let points = trajectory_points(&out.samples, &problem.target().state, &probe)?;
    let path = dir.join("trajectory.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_trajectory_csv(BufWriter::new(file), &points)?;
    let final_fidelity = points.last().map_or(f64::NAN, |p| p.fidelity_to_target);
    let report = TrajectoryReport {
        n_samples: points.len(),
        spheres: probe.partners.iter().map(|p| p.label().to_string()).collect(),
        final_fidelity,
        total_time_ms: schedule.total_duration() * 1e3,
    };
    write_json(dir.join("trajectory.json"), &report)?;
    let lines = vec![format!(
        "{} samples on {} spheres, final fidelity {:.6}",
        report.n_samples,
        report.spheres.len(),
        final_fidelity
    )];
    Ok((vec!["trajectory.csv".into(), "trajectory.json".into()], true, lines))
}

/// Result file of a `baseline` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub method: String,
    pub phase: Phase,
    pub params: BaselineParams,
    pub fidelity: f64,
    pub unitary_bound: f64,
    pub fidelity_over_bound: f64,
    pub duration_ms: f64,
}

fn baseline_ctx(cfg: &ExperimentConfig) -> Result<(BaselineContext, &crate::config::BaselineConfig)> {
    let b = cfg
        .baseline
        .as_ref()
        .ok_or_else(|| Error::validation("baseline", "section is required"))?;
    Ok((BaselineContext::new(cfg.system()?, b.pulse_mode)?, b))
}

fn run_baseline(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let (ctx, b) = baseline_ctx(cfg)?;
    let seq = build(&ctx, &b.params, b.phase)?;
    let e = seq.evaluate(&ctx)?;
    let report = BaselineReport {
        method: seq.method.name().to_string(),
        phase: b.phase,
        params: b.params.clone(),
        fidelity: e.fidelity,
        unitary_bound: e.bound,
        fidelity_over_bound: e.fidelity / e.bound,
        duration_ms: e.duration * 1e3,
    };
    write_json(dir.join("baseline.json"), &report)?;
    let lines = vec![
        ratio_line(&format!("{} {:?}", report.method, b.phase), e.fidelity, e.bound),
        format!("duration {} ms", fmt_ms(e.duration)),
    ];
    Ok((vec!["baseline.json".into()], true, lines))
}

/// Result file of a `search` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub method: String,
    pub phase: Phase,
    pub best: BaselineParams,
    pub point: Vec<f64>,
    pub axes: Vec<String>,
    pub fidelity: f64,
    pub unitary_bound: f64,
    pub fidelity_over_bound: f64,
    pub duration_ms: f64,
    pub threshold: f64,
    pub met_threshold: bool,
    pub n_points: usize,
}

fn run_search(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let (ctx, b) = baseline_ctx(cfg)?;
    let grid = cfg.search_grid()?;
    let write_rows = cfg.search.as_ref().is_some_and(|s| s.write_rows);
    let mut files = Vec::new();
    let outcome = if write_rows {
        let path = dir.join("search.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<String> = grid.axes.iter().map(|a| a.name.clone()).collect();
        header.extend(["fidelity".to_string(), "duration_s".to_string()]);
        w.write_record(&header)?;
        let mut sink = |r: &SearchRow| -> Result<()> {
            let mut rec: Vec<String> = r.point.iter().map(|v| fmt_float(*v)).collect();
            rec.push(fmt_float(r.fidelity));
            rec.push(fmt_float(r.duration));
            w.write_record(&rec)?;
            Ok(())
        };
        let o = brute_force_search(&ctx, &b.params, b.phase, &grid, Some(&mut sink))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push("search.csv".to_string());
        o
    } else {
        brute_force_search(&ctx, &b.params, b.phase, &grid, None)?
    };
    let report = SearchReport {
        method: b.params.method().name().to_string(),
        phase: b.phase,
        best: outcome.params.clone(),
        point: outcome.point.clone(),
        axes: grid.axes.iter().map(|a| a.name.clone()).collect(),
        fidelity: outcome.fidelity,
        unitary_bound: outcome.bound,
        fidelity_over_bound: outcome.fidelity / outcome.bound,
        duration_ms: outcome.duration * 1e3,
        threshold: grid.fidelity_threshold,
        met_threshold: outcome.met_threshold,
        n_points: outcome.n_points,
    };
    write_json(dir.join("search.json"), &report)?;
    files.push("search.json".to_string());
    let point: Vec<String> = report
        .axes
        .iter()
        .zip(&report.point)
        .map(|(n, v)| format!("{n}={v:.6}"))
        .collect();
    let lines = vec![
        format!("{} points, best {}", report.n_points, point.join(" ")),
        ratio_line("search", outcome.fidelity, outcome.bound),
        format!(
            "duration {} ms, threshold met {}",
            fmt_ms(outcome.duration),
            outcome.met_threshold
        ),
    ];
    Ok((files, true, lines))
}

fn run_fit_decay(cfg: &ExperimentConfig, base: &Path, dir: &Path) -> Result<Outcome> {
    let (series, opts) = cfg.decay_series(base)?;
    let fit: DecayFit = fit_exponential_decay_with(&series, &opts)?;
    write_json(dir.join("decay_fit.json"), &fit)?;
    let path = dir.join("decay.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    fit.write_csv(&series, BufWriter::new(file))?;
    let lines = vec![format!(
        "T_LLS = {:.4} ± {:.4} s, A0 = {:.4}, rms residual {:.3e}",
        fit.t_lls, fit.t_lls_stderr, fit.amplitude0, fit.residual_rms
    )];
    Ok((vec!["decay_fit.json".into(), "decay.csv".into()], true, lines))
}

/// Summarizes an existing result bundle from its manifest and JSON outputs.
pub fn report(out_dir: &Path) -> Result<Vec<String>> {
    let path = out_dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let mut lines = vec![
        format!("{} ({}), seed {}, version {}", m.name, m.kind.name(), m.seed, m.version),
        format!("config sha256 {}", m.config_sha256),
        format!("wall time {:.2} s on {} threads, converged {}", m.wall_time_s, m.threads, m.converged),
    ];
    for o in &m.outputs {
        let p = out_dir.join(&o.file);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let ok = sha256_hex(&bytes) == o.sha256;
        lines.push(format!("  {} [{}]", o.file, if ok { "ok" } else { "MODIFIED" }));
        if o.file.ends_with(".json") {
            let v: serde_json::Value = serde_json::from_slice(&bytes)?;
            if let Some(obj) = v.as_object() {
                for (k, v) in obj {
                    if v.is_number() || v.is_boolean() || v.is_string() {
                        lines.push(format!("    {k} = {v}"));
                    }
                }
            }
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_runs_leave_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
name = "broken"
kind = "fit_decay"
[decay]
times_s = [0.0, 1.0, 2.0]
amplitudes = [1.0, 2.0, 4.0]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let err = run_config(cfg, text, dir.path(), dir.path(), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::FitFailure(_)));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn verb_must_match_config_kind() {
        let dir = tempfile::tempdir().unwrap();
        let text = "name = \"x\"\nkind = \"heatmap\"\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let opts = RunOptions {
            kind: Some(ExperimentKind::Evaluate),
            ..Default::default()
        };
        assert!(run_config(cfg, text, dir.path(), dir.path(), &opts).unwrap_err().is_validation());
    }
}
