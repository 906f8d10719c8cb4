//! QAOA pulse schedules and their multi-start optimization.
//!
//! A p-layer schedule alternates free evolution under H_A = H₀ for γ_i and
//! evolution under the RF Hamiltonian H_B for β_i:
//! U = Π_i U_B(β_i) U_A(γ_i), with U_A(γ_1) acting first.
//!
//! The search vector is laid out as [γ_1 … γ_p, β_1 … β_p], in seconds.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cobyla::{Cobyla, CobylaSettings, LocalOptimizer};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_h0, build_hb, build_target, ControlParams, SpinSystem, TargetKind, TargetOperator,
};
use crate::objective::{fidelity, scalarized_cost, unitary_bound, CostConfig};
use crate::output::{fmt_float, sha256_hex};
use crate::propagation::{
    apply_hard_rotation, run_schedule, Hamiltonian, HardRotation, PulseSchedule,
};
use crate::spin::{build_spin_operators, Component, DeviationState, OperatorMatrix, SpinOperators};

/// Transfer direction, used for labelling and defaults only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Magnetization to singlet order.
    MToS,
    /// Singlet order back to observable magnetization.
    SToM,
    Custom,
}

/// Starting operator of a transfer.
#[derive(Clone, Debug)]
pub enum InitialKind {
    /// Σ I^z, turned into Σ I^x by an ideal (π/2)_y pulse before the layers.
    Thermal,
    /// Σ I^x with no initialization pulse.
    Transverse,
    /// Σ I^z with no initialization pulse.
    Longitudinal,
    /// −I_a·I_b.
    SingletOrder(usize, usize),
    Custom(OperatorMatrix),
}

impl InitialKind {
    pub fn label(&self) -> String {
        match self {
            InitialKind::Thermal => "thermal".to_string(),
            InitialKind::Transverse => "transverse".to_string(),
            InitialKind::Longitudinal => "longitudinal".to_string(),
            InitialKind::SingletOrder(a, b) => format!("singlet_order({},{})", a + 1, b + 1),
            InitialKind::Custom(_) => "custom".to_string(),
        }
    }
}

/// Same bounds for every duration, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationBounds {
    pub min_s: f64,
    pub max_s: f64,
}

impl DurationBounds {
    pub fn new(min_s: f64, max_s: f64) -> Result<Self> {
        let b = Self { min_s, max_s };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_s.is_finite() && self.min_s >= 0.0) {
            return Err(Error::validation(
                "bounds.min",
                format!("{} (durations cannot be negative)", self.min_s),
            ));
        }
        if !(self.max_s.is_finite() && self.max_s >= self.min_s) {
            return Err(Error::validation(
                "bounds.max",
                format!("{} (must be finite and >= min {})", self.max_s, self.min_s),
            ));
        }
        Ok(())
    }

    /// [0, 100 ms].
    pub fn two_spin_default() -> Self {
        Self {
            min_s: 0.0,
            max_s: 0.1,
        }
    }
}

/// Everything needed to define a QAOA transfer. Turned into a
/// [`QaoaProblem`] by [`QaoaProblem::new`].
#[derive(Clone, Debug)]
pub struct QaoaSpec {
    pub system: SpinSystem,
    pub layers: usize,
    pub ctrl: ControlParams,
    pub initial: InitialKind,
    pub target: TargetKind,
    pub cost: CostConfig,
    pub bounds: DurationBounds,
    pub direction: Direction,
}

impl QaoaSpec {
    /// Two-spin magnetization → singlet order from Σ I^x (the initialization
    /// pulse assumed already applied).
    pub fn m_to_s(system: SpinSystem, layers: usize, ctrl: ControlParams) -> Self {
        Self {
            system,
            layers,
            ctrl,
            initial: InitialKind::Transverse,
            target: TargetKind::SingletOrder(0, 1),
            cost: CostConfig::default(),
            bounds: DurationBounds::two_spin_default(),
            direction: Direction::MToS,
        }
    }

    /// Two-spin singlet order → antiphase magnetization.
    pub fn s_to_m(system: SpinSystem, layers: usize, ctrl: ControlParams) -> Self {
        Self {
            initial: InitialKind::SingletOrder(0, 1),
            target: TargetKind::AntiphaseMagnetization(0, 1),
            direction: Direction::SToM,
            ..Self::m_to_s(system, layers, ctrl)
        }
    }
}

/// A validated transfer problem with its Hamiltonians precomputed.
#[derive(Clone, Debug)]
pub struct QaoaProblem {
    spec: QaoaSpec,
    ops: Arc<SpinOperators>,
    h0: OperatorMatrix,
    h_a: Arc<Hamiltonian>,
    h_b: Arc<Hamiltonian>,
    /// State the layers act on (after any initialization pulse).
    start: DeviationState,
    init_rotation: Option<HardRotation>,
    target: TargetOperator,
    bound: f64,
}

/// Single forward simulation of a schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub fidelity: f64,
    pub total_time: f64,
    pub cost: f64,
}

impl QaoaProblem {
    pub fn new(spec: QaoaSpec) -> Result<Self> {
        let ops = Arc::new(build_spin_operators(spec.system.n_spins())?);
        Self::with_operators(spec, ops)
    }

    /// Like [`QaoaProblem::new`] but reuses already built spin operators.
    pub fn with_operators(spec: QaoaSpec, ops: Arc<SpinOperators>) -> Result<Self> {
        if spec.layers == 0 {
            return Err(Error::validation("layers", "must be at least 1"));
        }
        spec.cost.validate()?;
        spec.bounds.validate()?;
        let ctrl = ControlParams::new(spec.ctrl.nu_hz, spec.ctrl.delta_off_hz)?;
        let h0 = build_h0(&spec.system, &ops)?;
        let hb = build_hb(&h0, &ops, ctrl)?;
        let (raw_initial, init_rotation) = match &spec.initial {
            InitialKind::Thermal => (
                ops.total(Component::Z).clone(),
                Some(HardRotation::y(std::f64::consts::FRAC_PI_2)),
            ),
            InitialKind::Transverse => (ops.total(Component::X).clone(), None),
            InitialKind::Longitudinal => (ops.total(Component::Z).clone(), None),
            InitialKind::SingletOrder(a, b) => (-&ops.scalar_product(*a, *b)?, None),
            InitialKind::Custom(m) => {
                if m.dim() != ops.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: ops.dim(),
                        found: m.dim(),
                    });
                }
                (m.clone(), None)
            }
        };
        let initial = DeviationState::new(raw_initial, spec.initial.label())?;
        let start = match &init_rotation {
            Some(rot) => apply_hard_rotation(&initial, rot),
            None => initial.clone(),
        };
        let target = build_target(spec.target.clone(), &ops)?;
        let bound = unitary_bound(initial.matrix(), target.matrix())?;
        Ok(Self {
            h_a: Arc::new(Hamiltonian::new(h0.clone())?),
            h_b: Arc::new(Hamiltonian::new(hb)?),
            h0,
            ops,
            start,
            init_rotation,
            target,
            bound,
            spec,
        })
    }

    /// Same problem at different control parameters; H_A and the operators
    /// are shared.
    pub fn with_control(&self, ctrl: ControlParams) -> Result<Self> {
        let ctrl = ControlParams::new(ctrl.nu_hz, ctrl.delta_off_hz)?;
        let hb = build_hb(&self.h0, &self.ops, ctrl)?;
        let mut next = self.clone();
        next.spec.ctrl = ctrl;
        next.h_b = Arc::new(Hamiltonian::new(hb)?);
        Ok(next)
    }

    pub fn spec(&self) -> &QaoaSpec {
        &self.spec
    }

    pub fn layers(&self) -> usize {
        self.spec.layers
    }

    pub fn ctrl(&self) -> ControlParams {
        self.spec.ctrl
    }

    pub fn operators(&self) -> &Arc<SpinOperators> {
        &self.ops
    }

    pub fn h0(&self) -> &OperatorMatrix {
        &self.h0
    }

    pub fn h_a(&self) -> &Arc<Hamiltonian> {
        &self.h_a
    }

    pub fn h_b(&self) -> &Arc<Hamiltonian> {
        &self.h_b
    }

    /// State before the layers, after any initialization pulse.
    pub fn start_state(&self) -> &DeviationState {
        &self.start
    }

    pub fn target(&self) -> &TargetOperator {
        &self.target
    }

    /// Unitary bound between the initial operator and the target.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    fn check_lengths(&self, gammas: &[f64], betas: &[f64]) -> Result<()> {
        let p = self.spec.layers;
        for (what, v) in [("gammas", gammas), ("betas", betas)] {
            if v.len() != p {
                return Err(Error::LengthMismatch {
                    what,
                    expected: p,
                    found: v.len(),
                });
            }
            if let Some(&bad) = v.iter().find(|d| !d.is_finite() || **d < 0.0) {
                return Err(Error::NegativeDuration(bad));
            }
        }
        Ok(())
    }

    /// Builds the executable schedule: optional initialization pulse, then
    /// (H_A, γ_i), (H_B, β_i) for i = 1…p.
    pub fn schedule(&self, gammas: &[f64], betas: &[f64]) -> Result<PulseSchedule> {
        self.check_lengths(gammas, betas)?;
        let mut s = PulseSchedule::new(self.ops.n_spins());
        if let Some(rot) = self.init_rotation {
            s.push_rotation(rot);
        }
        for (&g, &b) in gammas.iter().zip(betas) {
            s.push_segment(Arc::clone(&self.h_a), g)?;
            s.push_segment(Arc::clone(&self.h_b), b)?;
        }
        Ok(s)
    }

    /// Final state of the layers applied to the start state.
    pub fn final_state(&self, gammas: &[f64], betas: &[f64]) -> Result<DeviationState> {
        self.check_lengths(gammas, betas)?;
        let mut s = PulseSchedule::new(self.ops.n_spins());
        for (&g, &b) in gammas.iter().zip(betas) {
            s.push_segment(Arc::clone(&self.h_a), g)?;
            s.push_segment(Arc::clone(&self.h_b), b)?;
        }
        Ok(run_schedule(&self.start, &s, None, None)?.state)
    }

    pub fn evaluate(&self, gammas: &[f64], betas: &[f64]) -> Result<Evaluation> {
        let rho = self.final_state(gammas, betas)?;
        let f = fidelity(&rho, &self.target.state)?;
        let total_time: f64 = gammas.iter().chain(betas).sum();
        let cost = scalarized_cost(f, &[total_time], &self.spec.cost)?;
        Ok(Evaluation {
            fidelity: f,
            total_time,
            cost,
        })
    }

    fn evaluate_vector(&self, x: &[f64]) -> Result<Evaluation> {
        let p = self.spec.layers;
        self.evaluate(&x[..p], &x[p..])
    }

    /// Stable digest of everything that defines the problem.
    pub fn hash(&self) -> String {
        let s = &self.spec;
        let mut text = String::new();
        text.push_str(&format!("n_spins={}\n", s.system.n_spins()));
        for v in s.system.offsets_hz() {
            text.push_str(&format!("offset={}\n", fmt_float(*v)));
        }
        for row in s.system.j_couplings_hz() {
            let r: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
            text.push_str(&format!("j={}\n", r.join(",")));
        }
        text.push_str(&format!(
            "layers={}\nnu={}\ndelta={}\ninitial={}\ntarget={}\nr={}\nscale={}\nmin={}\nmax={}\ndirection={:?}\n",
            s.layers,
            fmt_float(s.ctrl.nu_hz),
            fmt_float(s.ctrl.delta_off_hz),
            s.initial.label(),
            s.target.label(),
            fmt_float(s.cost.r),
            fmt_float(s.cost.time_unit_scale),
            fmt_float(s.bounds.min_s),
            fmt_float(s.bounds.max_s),
            s.direction,
        ));
        if let InitialKind::Custom(op) = &s.initial {
            text.push_str(&custom_digest(op));
        }
        if let TargetKind::Custom(op) = &s.target {
            text.push_str(&custom_digest(op));
        }
        sha256_hex(text.as_bytes())
    }
}

fn custom_digest(op: &OperatorMatrix) -> String {
    let parts: Vec<String> = op
        .entries()
        .iter()
        .map(|z| format!("{},{}", fmt_float(z.re), fmt_float(z.im)))
        .collect();
    format!("custom={}\n", parts.join(";"))
}

/// Free-function form of [`QaoaProblem::schedule`].
pub fn build_qaoa_schedule(problem: &QaoaProblem, gammas: &[f64], betas: &[f64]) -> Result<PulseSchedule> {
    problem.schedule(gammas, betas)
}

/// Free-function form of [`QaoaProblem::evaluate`].
pub fn evaluate_schedule(problem: &QaoaProblem, gammas: &[f64], betas: &[f64]) -> Result<Evaluation> {
    problem.evaluate(gammas, betas)
}

/// Multi-start settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub cobyla: CobylaSettings,
    /// Number of local runs, counting the deterministic heuristic start.
    pub n_starts: usize,
    pub seed: u64,
    /// Width of the interval above the lower bound from which random starts
    /// are drawn. `None` uses 1/(4·J_max), or the full bound range for an
    /// uncoupled system.
    pub start_window_s: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            cobyla: CobylaSettings::default(),
            n_starts: 4,
            seed: 0,
            start_window_s: None,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        self.cobyla.validate()?;
        if self.n_starts == 0 {
            return Err(Error::validation("n_starts", "must be at least 1"));
        }
        if let Some(w) = self.start_window_s {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::validation("start_window", format!("{w} (must be > 0)")));
            }
        }
        Ok(())
    }
}

/// Outcome of [`optimize`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    pub fidelity: f64,
    pub total_time: f64,
    pub cost: f64,
    /// Evaluations summed over all starts.
    pub n_evals: usize,
    /// Whether the winning start reached `rhoend` within its budget.
    pub converged: bool,
    pub seed: u64,
    /// Index of the winning start (0 is the heuristic start).
    pub start_index: usize,
    pub bound: f64,
}

/// Serializable form of an [`OptimResult`], durations in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimRecord {
    pub problem_hash: String,
    pub direction: Direction,
    pub layers: usize,
    pub nu_hz: f64,
    pub delta_off_hz: f64,
    pub gammas_ms: Vec<f64>,
    pub betas_ms: Vec<f64>,
    pub fidelity: f64,
    pub unitary_bound: f64,
    pub fidelity_over_bound: f64,
    pub cost: f64,
    pub total_time_ms: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub seed: u64,
    pub start_index: usize,
}

impl OptimResult {
    pub fn record(&self, problem: &QaoaProblem) -> OptimRecord {
        let ms = |v: &[f64]| v.iter().map(|x| x * 1e3).collect();
        OptimRecord {
            problem_hash: problem.hash(),
            direction: problem.spec.direction,
            layers: problem.layers(),
            nu_hz: problem.ctrl().nu_hz,
            delta_off_hz: problem.ctrl().delta_off_hz,
            gammas_ms: ms(&self.gammas),
            betas_ms: ms(&self.betas),
            fidelity: self.fidelity,
            unitary_bound: self.bound,
            fidelity_over_bound: self.fidelity / self.bound,
            cost: self.cost,
            total_time_ms: self.total_time * 1e3,
            n_evals: self.n_evals,
            converged: self.converged,
            seed: self.seed,
            start_index: self.start_index,
        }
    }
}

impl OptimRecord {
    pub fn gammas_s(&self) -> Vec<f64> {
        self.gammas_ms.iter().map(|v| v * 1e-3).collect()
    }

    pub fn betas_s(&self) -> Vec<f64> {
        self.betas_ms.iter().map(|v| v * 1e-3).collect()
    }
}

/// Starting points: index 0 puts every duration at 1/(16·J_max) (clipped to
/// the bounds); the rest are uniform in [min, min + window] from a ChaCha
/// stream keyed by (seed, start index).
pub fn start_points(problem: &QaoaProblem, settings: &OptimizerSettings) -> Vec<Vec<f64>> {
    let n = 2 * problem.layers();
    let b = problem.spec.bounds;
    let j = problem.spec.system.max_coupling_hz();
    let window = settings
        .start_window_s
        .unwrap_or(if j > 0.0 { 1.0 / (4.0 * j) } else { b.max_s - b.min_s });
    let hi = (b.min_s + window).min(b.max_s);
    (0..settings.n_starts)
        .map(|k| {
            if k == 0 {
                let h = if j > 0.0 { 1.0 / (16.0 * j) } else { 0.5 * (b.min_s + hi) };
                vec![h.clamp(b.min_s, b.max_s); n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
                rng.set_stream(k as u64);
                (0..n)
                    .map(|_| {
                        if hi > b.min_s {
                            rng.random_range(b.min_s..hi)
                        } else {
                            b.min_s
                        }
                    })
                    .collect()
            }
        })
        .collect()
}

/// Minimizes the scalarized cost with the in-crate COBYLA-style method.
pub fn optimize(problem: &QaoaProblem, settings: &OptimizerSettings) -> Result<OptimResult> {
    optimize_with(problem, settings, &Cobyla::new(settings.cobyla))
}

/// Multi-start minimization with any local optimizer. Starts run
/// concurrently; the winner is the lowest cost, then the shortest total
/// time, then the lowest start index, so the outcome does not depend on
/// scheduling.
pub fn optimize_with(
    problem: &QaoaProblem,
    settings: &OptimizerSettings,
    optimizer: &dyn LocalOptimizer,
) -> Result<OptimResult> {
    settings.validate()?;
    let n = 2 * problem.layers();
    let b = problem.spec.bounds;
    let lower = vec![b.min_s; n];
    let upper = vec![b.max_s; n];
    let starts = start_points(problem, settings);
    let runs: Vec<Result<(usize, crate::cobyla::Minimum)>> = starts
        .par_iter()
        .enumerate()
        .map(|(k, x0)| {
            let mut f = |x: &[f64]| problem.evaluate_vector(x).map(|e| e.cost);
            optimizer.minimize(&mut f, x0, &lower, &upper).map(|m| (k, m))
        })
        .collect();

    let mut total_evals = 0;
    let mut best: Option<(usize, crate::cobyla::Minimum, Evaluation)> = None;
    for run in runs {
        let (k, m) = run?;
        total_evals += m.n_evals;
        let e = problem.evaluate_vector(&m.x)?;
        let better = match &best {
            None => true,
            Some((bk, _, be)) => {
                (e.cost, e.total_time, k).partial_cmp(&(be.cost, be.total_time, *bk))
                    == Some(std::cmp::Ordering::Less)
            }
        };
        if better {
            best = Some((k, m, e));
        }
    }
    let (k, m, e) = best.expect("n_starts >= 1");
    let p = problem.layers();
    Ok(OptimResult {
        gammas: m.x[..p].to_vec(),
        betas: m.x[p..].to_vec(),
        fidelity: e.fidelity,
        total_time: e.total_time,
        cost: e.cost,
        n_evals: total_evals,
        converged: m.converged,
        seed: settings.seed,
        start_index: k,
        bound: problem.bound(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_ii() -> (Vec<f64>, Vec<f64>) {
        (vec![14.069e-3, 6.810e-3], vec![3.452e-3, 0.025e-3])
    }

    fn moderate_problem() -> QaoaProblem {
        QaoaProblem::new(QaoaSpec::m_to_s(
            SpinSystem::moderate(),
            2,
            ControlParams::new(100.0, 0.0).unwrap(),
        ))
        .unwrap()
    }

    #[test]
    fn schedule_segment_order() {
        let p = moderate_problem();
        let (g, b) = table_ii();
        let s = p.schedule(&g, &b).unwrap();
        let durations: Vec<f64> = s
            .steps()
            .iter()
            .filter_map(|st| match st {
                crate::propagation::Step::Evolve(seg) => Some(seg.duration),
                _ => None,
            })
            .collect();
        assert_eq!(durations, vec![14.069e-3, 3.452e-3, 6.810e-3, 0.025e-3]);
    }

    #[test]
    fn length_and_sign_checks() {
        let p = moderate_problem();
        assert!(matches!(
            p.evaluate(&[1e-3], &[1e-3, 1e-3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            p.evaluate(&[1e-3, -1e-3], &[1e-3, 1e-3]),
            Err(Error::NegativeDuration(_))
        ));
    }

    #[test]
    fn schedule_and_fast_path_agree() {
        let p = moderate_problem();
        let (g, b) = table_ii();
        let fast = p.final_state(&g, &b).unwrap();
        let s = p.schedule(&g, &b).unwrap();
        let slow = run_schedule(p.start_state(), &s, None, None).unwrap().state;
        assert!(fast.matrix().max_abs_diff(slow.matrix()) < 1e-14);
    }

    #[test]
    fn thermal_start_gets_initialization_pulse() {
        let mut spec = QaoaSpec::m_to_s(SpinSystem::moderate(), 2, ControlParams::new(100.0, 0.0).unwrap());
        spec.initial = InitialKind::Thermal;
        let thermal = QaoaProblem::new(spec).unwrap();
        let direct = moderate_problem();
        assert!(thermal
            .start_state()
            .matrix()
            .max_abs_diff(direct.start_state().matrix())
            < 1e-12);
        let (g, b) = table_ii();
        assert!(matches!(
            thermal.schedule(&g, &b).unwrap().steps()[0],
            crate::propagation::Step::Rotate(_)
        ));
    }

    #[test]
    fn hash_tracks_spec() {
        let a = moderate_problem();
        let b = a.with_control(ControlParams::new(99.0, 0.0).unwrap()).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), moderate_problem().hash());
    }

    #[test]
    fn starts_are_reproducible_and_inside_bounds() {
        let p = moderate_problem();
        let s = OptimizerSettings {
            n_starts: 5,
            seed: 11,
            ..Default::default()
        };
        let a = start_points(&p, &s);
        assert_eq!(a, start_points(&p, &s));
        let more = start_points(&p, &OptimizerSettings { n_starts: 8, ..s });
        assert_eq!(&more[..5], &a[..]);
        for x in a.iter().flatten() {
            assert!((0.0..=0.1).contains(x));
        }
        assert!((a[0][0] - 1.0 / (16.0 * 17.2)).abs() < 1e-15);
    }
}
