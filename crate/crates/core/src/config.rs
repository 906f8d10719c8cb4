//! TOML experiment configuration.
//!
//! Units follow the key names: `_hz` in Hz, `_ms` in milliseconds, `_s` in
//! seconds. Baseline parameters use the library's own names and are in
//! seconds and Hz (`tau1 = 0.043`, `nu_hz = 25.3`). Spin indices are 1-based.
//!
//! ```toml
//! name = "moderate_qaoa_p2"
//! kind = "evaluate"
//!
//! [system]
//! preset = "moderate"
//!
//! [problem]
//! layers = 2
//! nu_hz = 100.0
//!
//! [schedule]
//! gammas_ms = [14.069, 6.810]
//! betas_ms = [3.452, 0.025]
//! ```
//!
//! Unknown keys are rejected, and [`ExperimentConfig::validate`] reports
//! every offending key at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineParams, GridAxis, Phase, SearchGrid};
use crate::cobyla::CobylaSettings;
use crate::decay::{DecaySeries, FitOptions};
use crate::error::{Error, Result};
use crate::hamiltonian::{load_complex_matrix_csv, ControlParams, SpinSystem, TargetKind};
use crate::objective::CostConfig;
use crate::propagation::{HardPulseMode, Recording};
use crate::qaoa::{Direction, DurationBounds, InitialKind, OptimizerSettings, QaoaSpec};
use crate::spin::{product_ket, TripletPartner};
use crate::sweep::{NuDeviation, SweepAxis, SweepGrid, SweepMode, SweepSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Optimize,
    Evaluate,
    Heatmap,
    Robustness,
    TotalProtocol,
    Trajectory,
    Baseline,
    Search,
    FitDecay,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Optimize => "optimize",
            ExperimentKind::Evaluate => "evaluate",
            ExperimentKind::Heatmap => "heatmap",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::TotalProtocol => "total_protocol",
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::Baseline => "baseline",
            ExperimentKind::Search => "search",
            ExperimentKind::FitDecay => "fit_decay",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    pub system: Option<SystemConfig>,
    pub problem: Option<ProblemConfig>,
    pub schedule: Option<ScheduleConfig>,
    pub optimizer: Option<OptimizerConfig>,
    pub grid: Option<GridConfig>,
    pub detection: Option<DetectionConfig>,
    pub trajectory: Option<TrajectoryConfig>,
    pub baseline: Option<BaselineConfig>,
    pub search: Option<SearchConfig>,
    pub decay: Option<DecayConfig>,
}

/// One of: a preset name, a two-spin (δ, J) pair, or explicit offsets and
/// a symmetric coupling matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub preset: Option<String>,
    pub delta_hz: Option<f64>,
    pub j_hz: Option<f64>,
    pub offsets_hz: Option<Vec<f64>>,
    pub couplings_hz: Option<Vec<Vec<f64>>>,
    /// Free text, e.g. where the parameters came from.
    pub note: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialName {
    Thermal,
    Transverse,
    Longitudinal,
    SingletOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    SingletOrder,
    PairwiseSingletSum,
    Antiphase,
    Transverse,
    Longitudinal,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub layers: usize,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    pub initial: Option<InitialName>,
    pub initial_pair: Option<[usize; 2]>,
    pub target: Option<TargetName>,
    pub target_pair: Option<[usize; 2]>,
    pub target_pairs: Option<Vec<[usize; 2]>>,
    /// CSV of `re,im` pairs for a custom target, relative to the config.
    pub target_file: Option<PathBuf>,
    pub nu_hz: f64,
    #[serde(default)]
    pub delta_off_hz: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_scale")]
    pub time_unit_scale: f64,
    #[serde(default)]
    pub min_duration_ms: f64,
    #[serde(default = "default_max_ms")]
    pub max_duration_ms: f64,
}

fn default_direction() -> Direction {
    Direction::MToS
}
fn default_r() -> f64 {
    0.4
}
fn default_scale() -> f64 {
    1.0
}
fn default_max_ms() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub gammas_ms: Vec<f64>,
    pub betas_ms: Vec<f64>,
}

impl ScheduleConfig {
    pub fn gammas_s(&self) -> Vec<f64> {
        self.gammas_ms.iter().map(|v| v * 1e-3).collect()
    }

    pub fn betas_s(&self) -> Vec<f64> {
        self.betas_ms.iter().map(|v| v * 1e-3).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_starts: Option<usize>,
    pub max_evals: Option<usize>,
    pub rhobeg_ms: Option<f64>,
    pub rhoend_ms: Option<f64>,
    pub start_window_ms: Option<f64>,
}

impl OptimizerConfig {
    /// Fills unset fields from `base`.
    pub fn settings(&self, base: OptimizerSettings, seed: u64) -> OptimizerSettings {
        OptimizerSettings {
            cobyla: CobylaSettings {
                rhobeg: self.rhobeg_ms.map_or(base.cobyla.rhobeg, |v| v * 1e-3),
                rhoend: self.rhoend_ms.map_or(base.cobyla.rhoend, |v| v * 1e-3),
                max_evals: self.max_evals.unwrap_or(base.cobyla.max_evals),
            },
            n_starts: self.n_starts.unwrap_or(base.n_starts),
            seed,
            start_window_s: self.start_window_ms.map(|v| v * 1e-3).or(base.start_window_s),
        }
    }
}

/// Axes of a (ν, Δ) map. For fixed-schedule maps the values are deviations
/// from the problem's controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_nu_min")]
    pub nu_min: f64,
    #[serde(default = "default_nu_max")]
    pub nu_max: f64,
    #[serde(default = "default_points")]
    pub nu_points: usize,
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_points")]
    pub delta_points: usize,
    #[serde(default)]
    pub nu_deviation: NuDeviation,
}

fn default_nu_min() -> f64 {
    5.0
}
fn default_nu_max() -> f64 {
    100.0
}
fn default_delta_min() -> f64 {
    -20.0
}
fn default_delta_max() -> f64 {
    20.0
}
fn default_points() -> usize {
    20
}

impl GridConfig {
    pub fn sweep_grid(&self, mode: SweepMode) -> SweepGrid {
        SweepGrid {
            nu_axis: SweepAxis {
                min: self.nu_min,
                max: self.nu_max,
                n_points: self.nu_points,
            },
            delta_axis: SweepAxis {
                min: self.delta_min,
                max: self.delta_max,
                n_points: self.delta_points,
            },
            mode,
            nu_deviation: self.nu_deviation,
        }
    }
}

/// The S → M half of a total-protocol map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub problem: ProblemConfig,
    pub schedule: ScheduleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub steps_per_segment: Option<usize>,
    pub every_ms: Option<f64>,
    #[serde(default = "default_pair")]
    pub pair: [usize; 2],
    #[serde(default = "default_partners")]
    pub partners: Vec<String>,
    /// Identity weight per level for normalized Bloch vectors.
    pub background: Option<f64>,
    /// Start from this pure product state instead of the problem's initial
    /// operator, e.g. `"++"`. Bloch vectors are then normalized with the
    /// state's own identity weight unless `background` is set.
    pub initial_ket: Option<String>,
}

fn default_pair() -> [usize; 2] {
    [1, 2]
}
fn default_partners() -> Vec<String> {
    TripletPartner::ALL.iter().map(|p| p.label().to_string()).collect()
}

impl TrajectoryConfig {
    pub fn recording(&self) -> Recording {
        match (self.every_ms, self.steps_per_segment) {
            (Some(dt), _) => Recording::Every(dt * 1e-3),
            (None, Some(n)) => Recording::StepsPerSegment(n),
            (None, None) => Recording::default(),
        }
    }

    pub fn partners(&self) -> Result<Vec<TripletPartner>> {
        self.partners.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub params: BaselineParams,
    #[serde(default = "default_phase")]
    pub phase: Phase,
    #[serde(default)]
    pub pulse_mode: HardPulseMode,
}

fn default_phase() -> Phase {
    Phase::Preparation
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Relative to the unitary bound; ≤ 0 returns the best-fidelity point.
    pub threshold: f64,
    pub axes: Vec<GridAxis>,
    /// Write one CSV row per grid point.
    #[serde(default = "default_true")]
    pub write_rows: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    /// CSV with columns time_s, amplitude, relative to the config file.
    pub data: Option<PathBuf>,
    pub times_s: Option<Vec<f64>>,
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default)]
    pub offset: bool,
    pub label: Option<String>,
}

/// Problems found by validation, each tied to the key that caused it.
#[derive(Default)]
struct Issues(Vec<(String, String)>);

impl Issues {
    fn push(&mut self, key: impl Into<String>, reason: impl Into<String>) {
        self.0.push((key.into(), reason.into()));
    }

    fn check(&mut self, key: &str, r: Result<()>) {
        if let Err(e) = r {
            match e {
                Error::Validation { key: k, reason } => self.push(format!("{key}.{k}"), reason),
                other => self.push(key, other.to_string()),
            }
        }
    }

    fn finish(self) -> Result<()> {
        if self.0.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.0.iter().map(|(k, _)| k.as_str()).collect();
        let reasons: Vec<String> = self.0.iter().map(|(k, r)| format!("{k}: {r}")).collect();
        Err(Error::validation(keys.join(", "), reasons.join("; ")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.kind
            .ok_or_else(|| Error::validation("kind", "not set in the config or on the command line"))
    }

    /// Checks every section the experiment kind needs, reporting all
    /// offending keys together.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Issues::default();
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            issues.push("name", "must be non-empty and use only [A-Za-z0-9_-]");
        }
        let kind = match self.kind() {
            Ok(k) => k,
            Err(_) => {
                issues.push("kind", "not set in the config or on the command line");
                return issues.finish();
            }
        };
        use ExperimentKind::*;
        let needs_problem = matches!(
            kind,
            Optimize | Evaluate | Heatmap | Robustness | TotalProtocol | Trajectory
        );
        let needs_schedule = matches!(kind, Evaluate | Robustness | TotalProtocol | Trajectory);
        let needs_system = needs_problem || matches!(kind, Baseline | Search);

        match (&self.system, needs_system) {
            (Some(s), true) => issues.check("system", s.build().map(|_| ())),
            (None, true) => issues.push("system", "section is required"),
            _ => {}
        }
        if needs_problem {
            match &self.problem {
                Some(p) => p.check("problem", &mut issues),
                None => issues.push("problem", "section is required"),
            }
        }
        if needs_schedule {
            match (&self.schedule, &self.problem) {
                (Some(s), Some(p)) => check_schedule("schedule", s, p.layers, &mut issues),
                (None, _) => issues.push("schedule", "section is required"),
                _ => {}
            }
        }
        if let Some(o) = &self.optimizer {
            let s = o.settings(OptimizerSettings::default(), self.seed);
            issues.check("optimizer", s.validate());
        }
        if matches!(kind, Heatmap | Robustness | TotalProtocol) {
            let mode = if kind == Heatmap {
                SweepMode::Reoptimize
            } else {
                SweepMode::FixedSchedule
            };
            match &self.grid {
                Some(g) => issues.check("grid", g.sweep_grid(mode).validate()),
                None if kind == Heatmap => {}
                None => issues.push("grid", "section is required"),
            }
        }
        if kind == TotalProtocol {
            match &self.detection {
                Some(d) => {
                    d.problem.check("detection.problem", &mut issues);
                    check_schedule("detection.schedule", &d.schedule, d.problem.layers, &mut issues);
                }
                None => issues.push("detection", "section is required"),
            }
        }
        if kind == Trajectory {
            if let Some(t) = &self.trajectory {
                issues.check("trajectory", t.partners().map(|_| ()));
                if let Some(k) = &t.initial_ket {
                    issues.check("trajectory.initial_ket", product_ket(k).map(|_| ()));
                }
                if let Some(dt) = t.every_ms {
                    if !(dt.is_finite() && dt > 0.0) {
                        issues.push("trajectory.every_ms", format!("{dt} (must be > 0)"));
                    }
                }
            }
        }
        if matches!(kind, Baseline | Search) {
            match &self.baseline {
                Some(b) => issues.check("baseline.params", b.params.validate()),
                None => issues.push("baseline", "section is required"),
            }
        }
        if kind == Search {
            match &self.search {
                Some(s) => {
                    if s.axes.is_empty() {
                        issues.push("search.axes", "at least one axis is required");
                    }
                    for (i, a) in s.axes.iter().enumerate() {
                        issues.check(&format!("search.axes[{i}]"), a.validate());
                        if let Some(b) = &self.baseline {
                            let mut p = b.params.clone();
                            issues.check(&format!("search.axes[{i}]"), p.set(&a.name, a.min));
                        }
                    }
                }
                None => issues.push("search", "section is required"),
            }
        }
        if kind == FitDecay {
            match &self.decay {
                Some(d) => {
                    let inline = d.times_s.is_some() || d.amplitudes.is_some();
                    if d.data.is_some() == inline {
                        issues.push("decay", "give either `data` or both `times_s` and `amplitudes`");
                    } else if inline && (d.times_s.is_none() || d.amplitudes.is_none()) {
                        issues.push("decay", "`times_s` and `amplitudes` go together");
                    }
                }
                None => issues.push("decay", "section is required"),
            }
        }
        issues.finish()
    }

    pub fn system(&self) -> Result<SpinSystem> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::validation("system", "section is required"))?
            .build()
    }

    pub fn qaoa_spec(&self, base_dir: &Path) -> Result<QaoaSpec> {
        let p = self
            .problem
            .as_ref()
            .ok_or_else(|| Error::validation("problem", "section is required"))?;
        p.spec(self.system()?, base_dir)
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        let base = SweepSettings::default().optimizer;
        SweepSettings {
            optimizer: match &self.optimizer {
                Some(o) => o.settings(base, self.seed),
                None => OptimizerSettings {
                    seed: self.seed,
                    ..base
                },
            },
        }
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        let base = OptimizerSettings::default();
        match &self.optimizer {
            Some(o) => o.settings(base, self.seed),
            None => OptimizerSettings {
                seed: self.seed,
                ..base
            },
        }
    }

    pub fn search_grid(&self) -> Result<SearchGrid> {
        let s = self
            .search
            .as_ref()
            .ok_or_else(|| Error::validation("search", "section is required"))?;
        Ok(SearchGrid {
            axes: s.axes.clone(),
            fidelity_threshold: s.threshold,
        })
    }

    pub fn decay_series(&self, base_dir: &Path) -> Result<(DecaySeries, FitOptions)> {
        let d = self
            .decay
            .as_ref()
            .ok_or_else(|| Error::validation("decay", "section is required"))?;
        let label = d.label.clone().unwrap_or_else(|| self.name.clone());
        let series = match (&d.data, &d.times_s, &d.amplitudes) {
            (Some(path), _, _) => {
                let mut s = DecaySeries::load_csv(base_dir.join(path))?;
                s.label = label;
                s
            }
            (None, Some(t), Some(a)) => DecaySeries::new(t.clone(), a.clone(), label)?,
            _ => return Err(Error::validation("decay", "no data given")),
        };
        Ok((
            series,
            FitOptions {
                offset: d.offset,
                ..FitOptions::default()
            },
        ))
    }
}

fn check_schedule(key: &str, s: &ScheduleConfig, layers: usize, issues: &mut Issues) {
    for (name, v) in [("gammas_ms", &s.gammas_ms), ("betas_ms", &s.betas_ms)] {
        if v.len() != layers {
            issues.push(
                format!("{key}.{name}"),
                format!("{} values for {layers} layers", v.len()),
            );
        }
        if let Some(bad) = v.iter().find(|d| !d.is_finite() || **d < 0.0) {
            issues.push(format!("{key}.{name}"), format!("{bad} is not a valid duration"));
        }
    }
}

fn pair0(key: &str, p: [usize; 2]) -> Result<(usize, usize)> {
    if p[0] == 0 || p[1] == 0 {
        return Err(Error::validation(key, "spin indices are 1-based"));
    }
    Ok((p[0] - 1, p[1] - 1))
}

impl SystemConfig {
    pub fn build(&self) -> Result<SpinSystem> {
        match (
            &self.preset,
            (self.delta_hz, self.j_hz),
            (&self.offsets_hz, &self.couplings_hz),
        ) {
            (Some(name), (None, None), (None, None)) => SpinSystem::preset(name).ok_or_else(|| {
                Error::validation(
                    "preset",
                    format!("unknown preset `{name}`; use moderate, strong or very_strong"),
                )
            }),
            (None, (Some(d), Some(j)), (None, None)) => SpinSystem::two_spin(d, j),
            (None, (None, None), (Some(o), Some(c))) => SpinSystem::new(o.clone(), c.clone()),
            _ => Err(Error::validation(
                "system",
                "give exactly one of `preset`, `delta_hz` + `j_hz`, or `offsets_hz` + `couplings_hz`",
            )),
        }
    }
}

impl ProblemConfig {
    fn check(&self, key: &str, issues: &mut Issues) {
        if self.layers == 0 {
            issues.push(format!("{key}.layers"), "must be at least 1");
        }
        issues.check(key, ControlParams::new(self.nu_hz, self.delta_off_hz).map(|_| ()));
        issues.check(key, CostConfig::new(self.r, self.time_unit_scale).map(|_| ()));
        if !(self.min_duration_ms.is_finite() && self.min_duration_ms >= 0.0) {
            issues.push(
                format!("{key}.min_duration_ms"),
                format!("{} (must be >= 0)", self.min_duration_ms),
            );
        }
        if !(self.max_duration_ms.is_finite() && self.max_duration_ms > self.min_duration_ms.max(0.0)) {
            issues.push(
                format!("{key}.max_duration_ms"),
                format!("{} (must exceed min_duration_ms)", self.max_duration_ms),
            );
        }
        if self.target == Some(TargetName::Custom) && self.target_file.is_none() {
            issues.push(format!("{key}.target_file"), "required for a custom target");
        }
        if self.target == Some(TargetName::PairwiseSingletSum) && self.target_pairs.is_none() {
            issues.push(format!("{key}.target_pairs"), "required for pairwise_singlet_sum");
        }
    }

    pub fn spec(&self, system: SpinSystem, base_dir: &Path) -> Result<QaoaSpec> {
        let initial_pair = pair0("initial_pair", self.initial_pair.unwrap_or([1, 2]))?;
        let target_pair = pair0("target_pair", self.target_pair.unwrap_or([1, 2]))?;
        let (default_initial, default_target) = match self.direction {
            Direction::SToM => (InitialName::SingletOrder, TargetName::Antiphase),
            _ => (InitialName::Transverse, TargetName::SingletOrder),
        };
        let initial = match self.initial.unwrap_or(default_initial) {
            InitialName::Thermal => InitialKind::Thermal,
            InitialName::Transverse => InitialKind::Transverse,
            InitialName::Longitudinal => InitialKind::Longitudinal,
            InitialName::SingletOrder => InitialKind::SingletOrder(initial_pair.0, initial_pair.1),
        };
        let target = match self.target.unwrap_or(default_target) {
            TargetName::SingletOrder => TargetKind::SingletOrder(target_pair.0, target_pair.1),
            TargetName::Antiphase => TargetKind::AntiphaseMagnetization(target_pair.0, target_pair.1),
            TargetName::Transverse => TargetKind::TransverseMagnetization,
            TargetName::Longitudinal => TargetKind::LongitudinalMagnetization,
            TargetName::PairwiseSingletSum => {
                let pairs = self
                    .target_pairs
                    .as_ref()
                    .ok_or_else(|| Error::validation("target_pairs", "required"))?
                    .iter()
                    .map(|&p| pair0("target_pairs", p))
                    .collect::<Result<Vec<_>>>()?;
                TargetKind::PairwiseSingletSum(pairs)
            }
            TargetName::Custom => {
                let file = self
                    .target_file
                    .as_ref()
                    .ok_or_else(|| Error::validation("target_file", "required"))?;
                TargetKind::Custom(load_complex_matrix_csv(base_dir.join(file), system.dim())?)
            }
        };
        Ok(QaoaSpec {
            layers: self.layers,
            ctrl: ControlParams::new(self.nu_hz, self.delta_off_hz)?,
            initial,
            target,
            cost: CostConfig::new(self.r, self.time_unit_scale)?,
            bounds: DurationBounds::new(self.min_duration_ms * 1e-3, self.max_duration_ms * 1e-3)?,
            direction: self.direction,
            system,
        })
    }
}
