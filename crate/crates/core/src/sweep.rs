//! Fidelity maps over the RF amplitude ν and offset Δ.
//!
//! Three kinds of map share one grid type:
//!
//! * [`heatmap`] re-optimizes the schedule in every cell,
//! * [`robustness_map`] keeps a reference schedule and perturbs the controls,
//! * [`total_protocol_map`] chains a preparation schedule, an ideal
//!   singlet-order filter and a detection schedule under the same
//!   perturbation.
//!
//! Cells are evaluated concurrently and written back by index, and every
//! per-cell seed is derived from the base seed and the cell index, so maps
//! do not depend on the number of threads.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cobyla::CobylaSettings;
use crate::error::{Error, Result};
use crate::hamiltonian::ControlParams;
use crate::objective::fidelity;
use crate::output::{fmt_float, write_json};
use crate::propagation::run_schedule;
use crate::qaoa::{optimize, OptimResult, OptimizerSettings, QaoaProblem};
use crate::spin::DeviationState;

/// `n_points` evenly spaced values from `min` to `max` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub min: f64,
    pub max: f64,
    pub n_points: usize,
}

impl SweepAxis {
    pub fn new(min: f64, max: f64, n_points: usize) -> Result<Self> {
        let a = Self { min, max, n_points };
        a.validate("axis")?;
        Ok(a)
    }

    fn validate(&self, key: &str) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::validation(
                format!("{key}.n_points"),
                format!("{} (must be >= 2)", self.n_points),
            ));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::validation(
                key,
                format!("min {} must be below max {}", self.min, self.max),
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.n_points).map(|i| self.min + i as f64 * step).collect()
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n_points - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Reoptimize,
    FixedSchedule,
}

/// How the ν axis of a fixed-schedule map is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuDeviation {
    /// ε_ν in Hz, added to the reference amplitude.
    #[default]
    Absolute,
    /// ε_ν as a fraction of the reference amplitude (0.1 is +10 %).
    Relative,
}

/// Grid over (ν, Δ) for re-optimized maps, or over (ε_ν, ε_Δ) for
/// fixed-schedule maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub nu_axis: SweepAxis,
    pub delta_axis: SweepAxis,
    pub mode: SweepMode,
    #[serde(default)]
    pub nu_deviation: NuDeviation,
}

impl Default for SweepGrid {
    /// ν ∈ [5, 100] Hz, Δ ∈ [−20, 20] Hz, 20 × 20, re-optimized.
    fn default() -> Self {
        Self {
            nu_axis: SweepAxis {
                min: 5.0,
                max: 100.0,
                n_points: 20,
            },
            delta_axis: SweepAxis {
                min: -20.0,
                max: 20.0,
                n_points: 20,
            },
            mode: SweepMode::Reoptimize,
            nu_deviation: NuDeviation::Absolute,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        self.nu_axis.validate("nu_axis")?;
        self.delta_axis.validate("delta_axis")
    }

    fn expect_mode(&self, mode: SweepMode) -> Result<()> {
        self.validate()?;
        if self.mode != mode {
            return Err(Error::validation(
                "mode",
                format!("this map needs mode {mode:?}, the grid has {:?}", self.mode),
            ));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.nu_axis.n_points * self.delta_axis.n_points
    }
}

/// Per-cell budget of a re-optimized map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub optimizer: OptimizerSettings,
}

impl Default for SweepSettings {
    /// Three starts of at most 800 evaluations each.
    fn default() -> Self {
        Self {
            optimizer: OptimizerSettings {
                cobyla: CobylaSettings {
                    max_evals: 800,
                    ..CobylaSettings::default()
                },
                n_starts: 3,
                seed: 0,
                start_window_s: None,
            },
        }
    }
}

/// Seed of cell `index` for a map with base seed `seed`.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub nu_hz: f64,
    pub delta_hz: f64,
    pub fidelity: f64,
}

/// A fidelity surface. `fidelity[i][j]` belongs to `nu_hz[i]`, `delta_hz[j]`;
/// these are the control values actually simulated, so fixed-schedule maps
/// hold ν + ε_ν and Δ + ε_Δ. Failed cells hold NaN with `converged` false.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub kind: String,
    pub grid: SweepGrid,
    pub nu_hz: Vec<f64>,
    pub delta_hz: Vec<f64>,
    pub fidelity: Vec<Vec<f64>>,
    pub converged: Vec<Vec<bool>>,
    pub best_point: BestPoint,
    pub bound: f64,
    /// Not part of the written outputs, which must be reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl HeatmapResult {
    pub fn shape(&self) -> (usize, usize) {
        (self.nu_hz.len(), self.delta_hz.len())
    }

    /// Fidelity of the cell nearest to (ν, Δ).
    pub fn nearest(&self, nu_hz: f64, delta_hz: f64) -> (usize, usize, f64) {
        let near = |v: &[f64], x: f64| {
            (0..v.len())
                .min_by(|&a, &b| (v[a] - x).abs().total_cmp(&(v[b] - x).abs()))
                .unwrap_or(0)
        };
        let i = near(&self.nu_hz, nu_hz);
        let j = near(&self.delta_hz, delta_hz);
        (i, j, self.fidelity[i][j])
    }

    /// Best fidelity among cells within one grid step of (ν, Δ) on both axes.
    pub fn best_near(&self, nu_hz: f64, delta_hz: f64) -> Option<(f64, f64, f64)> {
        let (sn, sd) = (self.grid.nu_axis.step(), self.grid.delta_axis.step());
        let mut best: Option<(f64, f64, f64)> = None;
        for (i, &nu) in self.nu_hz.iter().enumerate() {
            for (j, &d) in self.delta_hz.iter().enumerate() {
                let f = self.fidelity[i][j];
                if (nu - nu_hz).abs() <= sn * (1.0 + 1e-9)
                    && (d - delta_hz).abs() <= sd * (1.0 + 1e-9)
                    && !f.is_nan()
                    && best.is_none_or(|b| f > b.2)
                {
                    best = Some((nu, d, f));
                }
            }
        }
        best
    }

    /// Rows nu_hz, delta_hz, fidelity, converged with ν varying slowest.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["nu_hz", "delta_hz", "fidelity", "converged"])?;
        for (i, nu) in self.nu_hz.iter().enumerate() {
            for (j, d) in self.delta_hz.iter().enumerate() {
                w.write_record([
                    fmt_float(*nu),
                    fmt_float(*d),
                    fmt_float(self.fidelity[i][j]),
                    self.converged[i][j].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<heatmap csv>", e))?;
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        write_json(dir.join(format!("{stem}.json")), &self.sidecar())
    }

    pub fn sidecar(&self) -> HeatmapSidecar {
        HeatmapSidecar {
            kind: self.kind.clone(),
            grid: self.grid,
            n_nu: self.nu_hz.len(),
            n_delta: self.delta_hz.len(),
            best_point: self.best_point,
            unitary_bound: self.bound,
            failures: self.failures.clone(),
        }
    }
}

/// Grid metadata written next to a heatmap CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub kind: String,
    pub grid: SweepGrid,
    pub n_nu: usize,
    pub n_delta: usize,
    pub best_point: BestPoint,
    pub unitary_bound: f64,
    #[serde(default)]
    pub failures: Vec<String>,
}

struct Cell {
    nu: f64,
    delta: f64,
    fidelity: f64,
    converged: bool,
    failure: Option<String>,
}

impl Cell {
    fn from_result(nu: f64, delta: f64, r: Result<(f64, bool)>) -> Self {
        match r {
            Ok((fidelity, converged)) => Cell {
                nu,
                delta,
                fidelity,
                converged,
                failure: None,
            },
            Err(e) => Cell {
                nu,
                delta,
                fidelity: f64::NAN,
                converged: false,
                failure: Some(format!("nu={nu} delta={delta}: {e}")),
            },
        }
    }
}

fn assemble(
    kind: &str,
    grid: &SweepGrid,
    nu_values: Vec<f64>,
    delta_values: Vec<f64>,
    cells: Vec<Cell>,
    bound: f64,
    start: Instant,
) -> HeatmapResult {
    let nd = delta_values.len();
    let mut fid = vec![vec![f64::NAN; nd]; nu_values.len()];
    let mut conv = vec![vec![false; nd]; nu_values.len()];
    let mut failures = Vec::new();
    // Argmax in row-major order; the first maximum wins.
    let mut best = BestPoint {
        nu_hz: f64::NAN,
        delta_hz: f64::NAN,
        fidelity: f64::NEG_INFINITY,
    };
    for (index, c) in cells.into_iter().enumerate() {
        let (i, j) = (index / nd, index % nd);
        fid[i][j] = c.fidelity;
        conv[i][j] = c.converged;
        if let Some(f) = c.failure {
            failures.push(f);
        }
        if c.fidelity > best.fidelity {
            best = BestPoint {
                nu_hz: c.nu,
                delta_hz: c.delta,
                fidelity: c.fidelity,
            };
        }
    }
    if best.fidelity == f64::NEG_INFINITY {
        best.fidelity = f64::NAN;
    }
    HeatmapResult {
        kind: kind.to_string(),
        grid: *grid,
        nu_hz: nu_values,
        delta_hz: delta_values,
        fidelity: fid,
        converged: conv,
        best_point: best,
        bound,
        wall_time_s: start.elapsed().as_secs_f64(),
        failures,
    }
}

/// Re-optimized map: every (ν, Δ) cell runs [`optimize`] with the controls
/// held fixed and the seed `cell_seed(settings.optimizer.seed, index)`.
pub fn heatmap(template: &QaoaProblem, grid: &SweepGrid, settings: &SweepSettings) -> Result<HeatmapResult> {
    grid.expect_mode(SweepMode::Reoptimize)?;
    settings.optimizer.validate()?;
    let start = Instant::now();
    let nus = grid.nu_axis.values();
    let deltas = grid.delta_axis.values();
    let nd = deltas.len();
    let cells: Vec<Cell> = (0..grid.n_cells())
        .into_par_iter()
        .map(|index| {
            let (nu, delta) = (nus[index / nd], deltas[index % nd]);
            let run = || -> Result<(f64, bool)> {
                let problem = template.with_control(ControlParams::new(nu, delta)?)?;
                let opt = OptimizerSettings {
                    seed: cell_seed(settings.optimizer.seed, index),
                    ..settings.optimizer
                };
                let r = optimize(&problem, &opt)?;
                Ok((r.fidelity, r.converged))
            };
            Cell::from_result(nu, delta, run())
        })
        .collect();
    Ok(assemble("reoptimize", grid, nus, deltas, cells, template.bound(), start))
}

fn perturbed(reference: ControlParams, grid: &SweepGrid, eps_nu: f64, eps_delta: f64) -> (f64, f64) {
    let nu = match grid.nu_deviation {
        NuDeviation::Absolute => reference.nu_hz + eps_nu,
        NuDeviation::Relative => reference.nu_hz * (1.0 + eps_nu),
    };
    (nu, reference.delta_off_hz + eps_delta)
}

fn check_reference(problem: &QaoaProblem, reference: &OptimResult) -> Result<()> {
    let p = problem.layers();
    if reference.gammas.len() != p || reference.betas.len() != p {
        return Err(Error::LengthMismatch {
            what: "reference schedule",
            expected: p,
            found: reference.gammas.len().min(reference.betas.len()),
        });
    }
    Ok(())
}

/// Fixed-schedule map: the reference durations are re-simulated at
/// (ν + ε_ν, Δ + ε_Δ) around the problem's own controls. The cell at zero
/// deviation is computed exactly as [`QaoaProblem::evaluate`] would.
pub fn robustness_map(problem: &QaoaProblem, reference: &OptimResult, grid: &SweepGrid) -> Result<HeatmapResult> {
    grid.expect_mode(SweepMode::FixedSchedule)?;
    check_reference(problem, reference)?;
    let start = Instant::now();
    let eps_nu = grid.nu_axis.values();
    let eps_delta = grid.delta_axis.values();
    let nd = eps_delta.len();
    let ctrl = problem.ctrl();
    let cells: Vec<Cell> = (0..grid.n_cells())
        .into_par_iter()
        .map(|index| {
            let (nu, delta) = perturbed(ctrl, grid, eps_nu[index / nd], eps_delta[index % nd]);
            let run = || -> Result<(f64, bool)> {
                let p = problem.with_control(ControlParams::new(nu, delta)?)?;
                Ok((p.evaluate(&reference.gammas, &reference.betas)?.fidelity, true))
            };
            Cell::from_result(nu, delta, run())
        })
        .collect();
    let (nus, deltas) = applied_axes(ctrl, grid, &eps_nu, &eps_delta);
    Ok(assemble("robustness", grid, nus, deltas, cells, problem.bound(), start))
}

fn applied_axes(ctrl: ControlParams, grid: &SweepGrid, eps_nu: &[f64], eps_delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        eps_nu.iter().map(|&e| perturbed(ctrl, grid, e, 0.0).0).collect(),
        eps_delta.iter().map(|&e| perturbed(ctrl, grid, 0.0, e).1).collect(),
    )
}

/// Signal-normalized fidelity of the whole M → S → M protocol.
///
/// The preparation state is projected onto the detection problem's starting
/// operator (the singlet-order filter), then evolved by the detection
/// schedule. The overlap with the detection target is normalized by the norm
/// of the preparation's initial state rather than the final state, so signal
/// lost in the filter counts against the protocol; without any loss this is
/// exactly F_prep × F_detect.
pub fn total_protocol_fidelity(
    prep: &QaoaProblem,
    prep_ref: &OptimResult,
    detect: &QaoaProblem,
    detect_ref: &OptimResult,
) -> Result<f64> {
    if prep.operators().dim() != detect.operators().dim() {
        return Err(Error::DimensionMismatch {
            expected: prep.operators().dim(),
            found: detect.operators().dim(),
        });
    }
    let rho = prep.final_state(&prep_ref.gammas, &prep_ref.betas)?;
    let s = detect.start_state().matrix();
    let amplitude = rho.matrix().trace_product(s).re / s.norm_sq();
    if amplitude == 0.0 {
        return Ok(0.0);
    }
    let filtered = DeviationState::new(s.scale(amplitude), "filtered")?;
    let schedule = detect.schedule(&detect_ref.gammas, &detect_ref.betas)?;
    let out = run_schedule(&filtered, &schedule, None, None)?.state;
    let shape = fidelity(&out, &detect.target().state)?;
    // `shape` is normalized by the filtered state's norm; rescale to the
    // norm of the preparation's initial state.
    let kept = filtered.matrix().frobenius_norm() / prep.start_state().matrix().frobenius_norm();
    Ok(shape * kept)
}

/// Fixed-schedule map of [`total_protocol_fidelity`] with the same
/// deviation applied to both halves.
pub fn total_protocol_map(
    prep: &QaoaProblem,
    prep_ref: &OptimResult,
    detect: &QaoaProblem,
    detect_ref: &OptimResult,
    grid: &SweepGrid,
) -> Result<HeatmapResult> {
    grid.expect_mode(SweepMode::FixedSchedule)?;
    check_reference(prep, prep_ref)?;
    check_reference(detect, detect_ref)?;
    let start = Instant::now();
    let eps_nu = grid.nu_axis.values();
    let eps_delta = grid.delta_axis.values();
    let nd = eps_delta.len();
    let (pc, dc) = (prep.ctrl(), detect.ctrl());
    let cells: Vec<Cell> = (0..grid.n_cells())
        .into_par_iter()
        .map(|index| {
            let (en, ed) = (eps_nu[index / nd], eps_delta[index % nd]);
            let (nu, delta) = perturbed(pc, grid, en, ed);
            let run = || -> Result<(f64, bool)> {
                let (dnu, dd) = perturbed(dc, grid, en, ed);
                let p = prep.with_control(ControlParams::new(nu, delta)?)?;
                let d = detect.with_control(ControlParams::new(dnu, dd)?)?;
                Ok((total_protocol_fidelity(&p, prep_ref, &d, detect_ref)?, true))
            };
            Cell::from_result(nu, delta, run())
        })
        .collect();
    let (nus, deltas) = applied_axes(pc, grid, &eps_nu, &eps_delta);
    let bound = prep.bound() * detect.bound();
    Ok(assemble("total_protocol", grid, nus, deltas, cells, bound, start))
}
