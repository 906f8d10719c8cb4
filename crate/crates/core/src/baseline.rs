//! Benchmark singlet-order sequences and their brute-force parameter search.
//!
//! Every preparation sequence starts from thermal magnetization Σ I^z and
//! targets singlet order −I₁·I₂. Detection sequences start from singlet
//! order and end on an observable that depends on the method. Pulse phases
//! use the rotation convention of [`HardRotation`]: an (θ)_φ pulse is
//! exp(−iθ n_φ·I).
//!
//! Sequence layouts (hard pulses ideal unless a finite amplitude is set):
//!
//! * CL preparation: (π/2)_x − τ₁ − (π)_y − τ₂ − (π/2)_{−y} − τ₃.
//!   CL detection: τ₅ − (π/2)_{−x}, read out as I₁ˣI₂ᶻ − I₁ᶻI₂ˣ.
//!   The storage interval between the two is not simulated.
//! * M2S: (π/2)_x − [τ_d − π − τ_d]^{n₁} − (π/2)_y − τ_d − [τ_d − π − τ_d]^{n₂},
//!   with π pulses alternating x, −x within each train. S2M applies the same
//!   steps in reverse order and is read out as Σ I^z.
//! * SLIC preparation: (π/2)_y, then H₀ − 2πν Iˣ for τ_p. Detection: the lock
//!   alone, read out as Σ Iˣ.
//! * APSOC preparation: (π/2)_y, then n piecewise-constant steps of
//!   H₀ − 2πν(t) Iˣ − 2πΔ I^z with ν ramped from ν_max to 0, sampled at step
//!   midpoints. Detection ramps 0 → ν_max and is read out as Σ Iˣ.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{build_h0, ControlParams, SpinSystem};
use crate::objective::{fidelity, unitary_bound};
use crate::propagation::{
    run_schedule, Hamiltonian, HardPulseMode, HardRotation, PropagatorCache, PulseSchedule,
};
use crate::spin::{build_spin_operators, Component, DeviationState, SpinOperators};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cl,
    M2s,
    S2m,
    Slic,
    Apsoc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cl => "CL",
            Method::M2s => "M2S",
            Method::S2m => "S2M",
            Method::Slic => "SLIC",
            Method::Apsoc => "APSOC",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cl" => Ok(Method::Cl),
            "m2s" => Ok(Method::M2s),
            "s2m" => Ok(Method::S2m),
            "slic" => Ok(Method::Slic),
            "apsoc" => Ok(Method::Apsoc),
            other => Err(Error::validation(
                "method",
                format!("`{other}` is not one of cl, m2s, s2m, slic, apsoc"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Preparation,
    Detection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ramp {
    #[default]
    Linear,
    Cosine,
}

impl Ramp {
    /// Rising profile on f ∈ [0, 1], from 0 to 1.
    fn rising(self, f: f64) -> f64 {
        match self {
            Ramp::Linear => f,
            Ramp::Cosine => 0.5 * (1.0 - (PI * f).cos()),
        }
    }
}

/// Method parameters; delays in seconds, frequencies in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum BaselineParams {
    Cl {
        tau1: f64,
        tau2: f64,
        tau3: f64,
        tau5: f64,
    },
    M2s {
        tau_d: f64,
        n1: u32,
        n2: u32,
    },
    Slic {
        nu_hz: f64,
        tau_p: f64,
    },
    Apsoc {
        offset_hz: f64,
        tau: f64,
        nu_max_hz: f64,
        #[serde(default)]
        ramp: Ramp,
        #[serde(default = "default_ramp_steps")]
        n_steps: u32,
    },
}

fn default_ramp_steps() -> u32 {
    200
}

impl BaselineParams {
    /// CL delays (43, 83, 7) ms and detection delay 6.3 ms.
    pub fn cl_reference() -> Self {
        BaselineParams::Cl {
            tau1: 0.043,
            tau2: 0.083,
            tau3: 0.007,
            tau5: 0.0063,
        }
    }

    /// τ_d = 12.589 ms, one echo per train.
    pub fn m2s_reference() -> Self {
        BaselineParams::M2s {
            tau_d: 0.012589,
            n1: 1,
            n2: 1,
        }
    }

    /// ν = 25.3 Hz, τ_p = 21.5 ms.
    pub fn slic_reference() -> Self {
        BaselineParams::Slic {
            nu_hz: 25.3,
            tau_p: 0.0215,
        }
    }

    /// Δ = 20 Hz, τ = 160 ms, ν_max = 281 Hz, linear ramp in 200 steps.
    pub fn apsoc_reference() -> Self {
        BaselineParams::Apsoc {
            offset_hz: 20.0,
            tau: 0.16,
            nu_max_hz: 281.0,
            ramp: Ramp::Linear,
            n_steps: 200,
        }
    }

    pub fn method(&self) -> Method {
        match self {
            BaselineParams::Cl { .. } => Method::Cl,
            BaselineParams::M2s { .. } => Method::M2s,
            BaselineParams::Slic { .. } => Method::Slic,
            BaselineParams::Apsoc { .. } => Method::Apsoc,
        }
    }

    /// Names accepted by [`BaselineParams::set`], in declaration order.
    pub fn names(&self) -> &'static [&'static str] {
        match self {
            BaselineParams::Cl { .. } => &["tau1", "tau2", "tau3", "tau5"],
            BaselineParams::M2s { .. } => &["tau_d", "n1", "n2"],
            BaselineParams::Slic { .. } => &["nu_hz", "tau_p"],
            BaselineParams::Apsoc { .. } => &["offset_hz", "tau", "nu_max_hz", "n_steps"],
        }
    }

    /// Overrides one named parameter. Counts must be whole numbers.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let count = |v: f64| -> Result<u32> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(Error::validation(name, format!("{v} is not a non-negative integer")))
            }
        };
        match (self, name) {
            (BaselineParams::Cl { tau1, .. }, "tau1") => *tau1 = value,
            (BaselineParams::Cl { tau2, .. }, "tau2") => *tau2 = value,
            (BaselineParams::Cl { tau3, .. }, "tau3") => *tau3 = value,
            (BaselineParams::Cl { tau5, .. }, "tau5") => *tau5 = value,
            (BaselineParams::M2s { tau_d, .. }, "tau_d") => *tau_d = value,
            (BaselineParams::M2s { n1, .. }, "n1") => *n1 = count(value)?,
            (BaselineParams::M2s { n2, .. }, "n2") => *n2 = count(value)?,
            (BaselineParams::Slic { nu_hz, .. }, "nu_hz") => *nu_hz = value,
            (BaselineParams::Slic { tau_p, .. }, "tau_p") => *tau_p = value,
            (BaselineParams::Apsoc { offset_hz, .. }, "offset_hz") => *offset_hz = value,
            (BaselineParams::Apsoc { tau, .. }, "tau") => *tau = value,
            (BaselineParams::Apsoc { nu_max_hz, .. }, "nu_max_hz") => *nu_max_hz = value,
            (BaselineParams::Apsoc { n_steps, .. }, "n_steps") => *n_steps = count(value)?,
            (p, _) => {
                return Err(Error::validation(
                    name,
                    format!("not a parameter of {}; expected one of {:?}", p.method().name(), p.names()),
                ))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = |key: &str, v: f64| -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::validation(key, format!("{v} (must be finite and >= 0)")))
            }
        };
        match *self {
            BaselineParams::Cl {
                tau1,
                tau2,
                tau3,
                tau5,
            } => {
                non_negative("tau1", tau1)?;
                non_negative("tau2", tau2)?;
                non_negative("tau3", tau3)?;
                non_negative("tau5", tau5)
            }
            BaselineParams::M2s { tau_d, .. } => non_negative("tau_d", tau_d),
            BaselineParams::Slic { nu_hz, tau_p } => {
                non_negative("nu_hz", nu_hz)?;
                non_negative("tau_p", tau_p)
            }
            BaselineParams::Apsoc {
                offset_hz,
                tau,
                nu_max_hz,
                n_steps,
                ..
            } => {
                if !offset_hz.is_finite() || offset_hz == 0.0 {
                    return Err(Error::validation(
                        "offset_hz",
                        "the RF offset of an adiabatic passage must be non-zero",
                    ));
                }
                non_negative("tau", tau)?;
                non_negative("nu_max_hz", nu_max_hz)?;
                if n_steps < 10 {
                    return Err(Error::validation("n_steps", format!("{n_steps} (must be >= 10)")));
                }
                Ok(())
            }
        }
    }
}

/// Shared operators and memoized Hamiltonians for building and evaluating
/// baseline sequences on one spin system.
#[derive(Debug)]
pub struct BaselineContext {
    system: SpinSystem,
    ops: Arc<SpinOperators>,
    h0: Arc<Hamiltonian>,
    pulse_mode: HardPulseMode,
    rf: RwLock<HashMap<(u64, u64), Arc<Hamiltonian>>>,
    propagators: PropagatorCache,
    thermal: DeviationState,
    singlet: DeviationState,
    antiphase: DeviationState,
    transverse: DeviationState,
}

impl BaselineContext {
    pub fn new(system: SpinSystem, pulse_mode: HardPulseMode) -> Result<Self> {
        if system.n_spins() != 2 {
            return Err(Error::validation(
                "system",
                format!("baseline sequences are defined for spin pairs, got {} spins", system.n_spins()),
            ));
        }
        let ops = Arc::new(build_spin_operators(2)?);
        let h0 = Arc::new(Hamiltonian::new(build_h0(&system, &ops)?)?);
        let xz = ops.spin(0, Component::X).matmul(ops.spin(1, Component::Z));
        let zx = ops.spin(0, Component::Z).matmul(ops.spin(1, Component::X));
        Ok(Self {
            thermal: DeviationState::new(ops.total(Component::Z).clone(), "thermal Iz")?,
            singlet: DeviationState::new(-&ops.scalar_product(0, 1)?, "singlet order")?,
            antiphase: DeviationState::new(&xz - &zx, "antiphase")?,
            transverse: DeviationState::new(ops.total(Component::X).clone(), "Ix")?,
            system,
            ops,
            h0,
            pulse_mode,
            rf: RwLock::new(HashMap::new()),
            propagators: PropagatorCache::default(),
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn operators(&self) -> &Arc<SpinOperators> {
        &self.ops
    }

    pub fn pulse_mode(&self) -> HardPulseMode {
        self.pulse_mode
    }

    pub fn singlet_order(&self) -> &DeviationState {
        &self.singlet
    }

    pub fn thermal(&self) -> &DeviationState {
        &self.thermal
    }

    pub fn antiphase(&self) -> &DeviationState {
        &self.antiphase
    }

    /// H₀ − 2πν Iˣ − 2πΔ I^z, memoized on the bit patterns of (ν, Δ).
    pub fn rf_hamiltonian(&self, nu_hz: f64, offset_hz: f64) -> Result<Arc<Hamiltonian>> {
        let key = (nu_hz.to_bits(), offset_hz.to_bits());
        if let Some(h) = self.rf.read().get(&key) {
            return Ok(Arc::clone(h));
        }
        let ctrl = ControlParams::new(nu_hz, offset_hz)?;
        let op = crate::hamiltonian::build_hb(self.h0.operator(), &self.ops, ctrl)?;
        let h = Arc::new(Hamiltonian::new(op)?);
        Ok(Arc::clone(self.rf.write().entry(key).or_insert(h)))
    }

    fn pulse(&self, s: &mut PulseSchedule, rot: HardRotation) -> Result<()> {
        s.push_pulse(rot, self.pulse_mode, self.h0.operator(), &self.ops)
    }

    fn delay(&self, s: &mut PulseSchedule, t: f64) -> Result<()> {
        s.push_segment(Arc::clone(&self.h0), t)
    }
}

/// A built sequence together with what it starts from and is read out as.
#[derive(Clone, Debug)]
pub struct BaselineSequence {
    pub method: Method,
    pub phase: Phase,
    pub schedule: PulseSchedule,
    pub initial: DeviationState,
    pub observable: DeviationState,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEvaluation {
    pub fidelity: f64,
    pub bound: f64,
    pub duration: f64,
}

impl BaselineSequence {
    pub fn duration(&self) -> f64 {
        self.schedule.total_duration()
    }

    pub fn final_state(&self, ctx: &BaselineContext) -> Result<DeviationState> {
        Ok(run_schedule(&self.initial, &self.schedule, None, Some(&ctx.propagators))?.state)
    }

    pub fn evaluate(&self, ctx: &BaselineContext) -> Result<BaselineEvaluation> {
        let rho = self.final_state(ctx)?;
        Ok(BaselineEvaluation {
            fidelity: fidelity(&rho, &self.observable)?,
            bound: unitary_bound(self.initial.matrix(), self.observable.matrix())?,
            duration: self.duration(),
        })
    }
}

fn sequence(
    ctx: &BaselineContext,
    method: Method,
    phase: Phase,
    schedule: PulseSchedule,
    observable: &DeviationState,
) -> BaselineSequence {
    let initial = match phase {
        Phase::Preparation => ctx.thermal.clone(),
        Phase::Detection => ctx.singlet.clone(),
    };
    BaselineSequence {
        method,
        phase,
        schedule,
        initial,
        observable: observable.clone(),
    }
}

fn wrong_params(expected: Method, got: &BaselineParams) -> Error {
    Error::validation(
        "method",
        format!("expected {} parameters, got {}", expected.name(), got.method().name()),
    )
}

pub fn build_cl(ctx: &BaselineContext, params: &BaselineParams, phase: Phase) -> Result<BaselineSequence> {
    params.validate()?;
    let BaselineParams::Cl {
        tau1,
        tau2,
        tau3,
        tau5,
    } = *params
    else {
        return Err(wrong_params(Method::Cl, params));
    };
    let mut s = PulseSchedule::new(2);
    match phase {
        Phase::Preparation => {
            ctx.pulse(&mut s, HardRotation::x(FRAC_PI_2))?;
            ctx.delay(&mut s, tau1)?;
            ctx.pulse(&mut s, HardRotation::y(PI))?;
            ctx.delay(&mut s, tau2)?;
            ctx.pulse(&mut s, HardRotation::minus_y(FRAC_PI_2))?;
            ctx.delay(&mut s, tau3)?;
            Ok(sequence(ctx, Method::Cl, phase, s, &ctx.singlet))
        }
        Phase::Detection => {
            ctx.delay(&mut s, tau5)?;
            ctx.pulse(&mut s, HardRotation::minus_x(FRAC_PI_2))?;
            Ok(sequence(ctx, Method::Cl, phase, s, &ctx.antiphase))
        }
    }
}

fn echo_train(ctx: &BaselineContext, s: &mut PulseSchedule, tau_d: f64, n: u32) -> Result<()> {
    for k in 0..n {
        let rot = if k % 2 == 0 {
            HardRotation::x(PI)
        } else {
            HardRotation::minus_x(PI)
        };
        ctx.delay(s, tau_d)?;
        ctx.pulse(s, rot)?;
        ctx.delay(s, tau_d)?;
    }
    Ok(())
}

fn m2s_schedule(ctx: &BaselineContext, tau_d: f64, n1: u32, n2: u32) -> Result<PulseSchedule> {
    let mut s = PulseSchedule::new(2);
    ctx.pulse(&mut s, HardRotation::x(FRAC_PI_2))?;
    echo_train(ctx, &mut s, tau_d, n1)?;
    ctx.pulse(&mut s, HardRotation::y(FRAC_PI_2))?;
    ctx.delay(&mut s, tau_d)?;
    echo_train(ctx, &mut s, tau_d, n2)?;
    Ok(s)
}

pub fn build_m2s(ctx: &BaselineContext, params: &BaselineParams) -> Result<BaselineSequence> {
    params.validate()?;
    let BaselineParams::M2s { tau_d, n1, n2 } = *params else {
        return Err(wrong_params(Method::M2s, params));
    };
    let s = m2s_schedule(ctx, tau_d, n1, n2)?;
    Ok(sequence(ctx, Method::M2s, Phase::Preparation, s, &ctx.singlet))
}

/// The M2S steps in reverse order, read out as Σ I^z.
pub fn build_s2m(ctx: &BaselineContext, params: &BaselineParams) -> Result<BaselineSequence> {
    params.validate()?;
    let BaselineParams::M2s { tau_d, n1, n2 } = *params else {
        return Err(wrong_params(Method::M2s, params));
    };
    let forward = m2s_schedule(ctx, tau_d, n1, n2)?;
    let mut s = PulseSchedule::new(2);
    for step in forward.steps().iter().rev() {
        match step {
            crate::propagation::Step::Evolve(seg) => {
                s.push_segment(Arc::clone(&seg.hamiltonian), seg.duration)?
            }
            crate::propagation::Step::Rotate(rot) => s.push_rotation(*rot),
        }
    }
    Ok(sequence(ctx, Method::S2m, Phase::Detection, s, &ctx.thermal))
}

pub fn build_slic(ctx: &BaselineContext, params: &BaselineParams, phase: Phase) -> Result<BaselineSequence> {
    params.validate()?;
    let BaselineParams::Slic { nu_hz, tau_p } = *params else {
        return Err(wrong_params(Method::Slic, params));
    };
    let mut s = PulseSchedule::new(2);
    if phase == Phase::Preparation {
        ctx.pulse(&mut s, HardRotation::y(FRAC_PI_2))?;
    }
    s.push_segment(ctx.rf_hamiltonian(nu_hz, 0.0)?, tau_p)?;
    let observable = match phase {
        Phase::Preparation => &ctx.singlet,
        Phase::Detection => &ctx.transverse,
    };
    Ok(sequence(ctx, Method::Slic, phase, s, observable))
}

pub fn build_apsoc(ctx: &BaselineContext, params: &BaselineParams, phase: Phase) -> Result<BaselineSequence> {
    params.validate()?;
    let BaselineParams::Apsoc {
        offset_hz,
        tau,
        nu_max_hz,
        ramp,
        n_steps,
    } = *params
    else {
        return Err(wrong_params(Method::Apsoc, params));
    };
    let mut s = PulseSchedule::new(2);
    if phase == Phase::Preparation {
        ctx.pulse(&mut s, HardRotation::y(FRAC_PI_2))?;
    }
    let dt = tau / n_steps as f64;
    for k in 0..n_steps {
        let f = (k as f64 + 0.5) / n_steps as f64;
        let level = match phase {
            Phase::Preparation => ramp.rising(1.0 - f),
            Phase::Detection => ramp.rising(f),
        };
        s.push_segment(ctx.rf_hamiltonian(nu_max_hz * level, offset_hz)?, dt)?;
    }
    let observable = match phase {
        Phase::Preparation => &ctx.singlet,
        Phase::Detection => &ctx.transverse,
    };
    Ok(sequence(ctx, Method::Apsoc, phase, s, observable))
}

/// Dispatches on the parameter kind. M2S parameters build M2S for the
/// preparation phase and S2M for detection.
pub fn build(ctx: &BaselineContext, params: &BaselineParams, phase: Phase) -> Result<BaselineSequence> {
    match (params, phase) {
        (BaselineParams::Cl { .. }, _) => build_cl(ctx, params, phase),
        (BaselineParams::M2s { .. }, Phase::Preparation) => build_m2s(ctx, params),
        (BaselineParams::M2s { .. }, Phase::Detection) => build_s2m(ctx, params),
        (BaselineParams::Slic { .. }, _) => build_slic(ctx, params, phase),
        (BaselineParams::Apsoc { .. }, _) => build_apsoc(ctx, params, phase),
    }
}

/// One scanned parameter: values min, min + step, … up to max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn new(name: impl Into<String>, min: f64, max: f64, step: f64) -> Result<Self> {
        let axis = Self {
            name: name.into(),
            min,
            max,
            step,
        };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::validation(
                format!("grid.{}.step", self.name),
                format!("{} (must be > 0)", self.step),
            ));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::validation(
                format!("grid.{}", self.name),
                format!("min {} must not exceed max {}", self.min, self.max),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }
}

/// A rectangular grid over named parameters plus the acceptance threshold.
///
/// The threshold is relative to the unitary bound of the transfer: a point
/// qualifies when fidelity ≥ threshold × bound. A threshold ≤ 0 disables
/// the duration criterion and the search returns the best-fidelity point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub axes: Vec<GridAxis>,
    pub fidelity_threshold: f64,
}

impl SearchGrid {
    pub fn n_points(&self) -> usize {
        self.axes.iter().map(GridAxis::len).product()
    }

    fn point(&self, mut index: usize) -> Vec<f64> {
        // Last axis varies fastest, so index order is lexicographic order.
        let mut v = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            let n = axis.len();
            v[k] = axis.value(index % n);
            index /= n;
        }
        v
    }
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchRow {
    pub point: Vec<f64>,
    pub fidelity: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub params: BaselineParams,
    pub point: Vec<f64>,
    pub fidelity: f64,
    pub bound: f64,
    pub duration: f64,
    pub met_threshold: bool,
    pub n_points: usize,
}

/// Durations closer than this count as equal when ranking grid points.
const DURATION_TIE_S: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Candidate {
    index: usize,
    fidelity: f64,
    duration: f64,
}

/// Shortest duration first, then lowest grid index (lexicographic order).
fn shorter(a: &Candidate, b: &Candidate) -> bool {
    if (a.duration - b.duration).abs() > DURATION_TIE_S {
        a.duration < b.duration
    } else {
        a.index < b.index
    }
}

/// Highest fidelity first, then shortest duration, then lowest index.
fn fitter(a: &Candidate, b: &Candidate) -> bool {
    if a.fidelity != b.fidelity {
        a.fidelity > b.fidelity
    } else {
        shorter(a, b)
    }
}

fn pick(best: &mut Option<Candidate>, c: &Candidate, better: fn(&Candidate, &Candidate) -> bool) {
    if best.as_ref().map_or(true, |b| better(c, b)) {
        *best = Some(c.clone());
    }
}

/// Points handed to a worker at a time.
const SEARCH_CHUNK: usize = 2048;
/// Chunks evaluated between calls to the row sink.
const SEARCH_BLOCK: usize = 64;

/// Exhaustive scan of `grid` applied on top of `template`.
///
/// Among points meeting the threshold the shortest sequence wins, ties going
/// to the lexicographically smallest point; if none qualifies the highest
/// fidelity point is returned with `met_threshold = false`. Rows are handed
/// to `sink` in grid order, so output files do not depend on the number of
/// worker threads.
pub fn brute_force_search(
    ctx: &BaselineContext,
    template: &BaselineParams,
    phase: Phase,
    grid: &SearchGrid,
    mut sink: Option<&mut dyn FnMut(&SearchRow) -> Result<()>>,
) -> Result<SearchOutcome> {
    if grid.axes.is_empty() {
        return Err(Error::validation("grid.axes", "at least one axis is required"));
    }
    for axis in &grid.axes {
        axis.validate()?;
        template.clone().set(&axis.name, axis.min)?;
    }
    let total = grid.n_points();
    let bound = build(ctx, template, phase)?.evaluate(ctx)?.bound;
    let threshold = grid.fidelity_threshold;
    let want_rows = sink.is_some();

    let mut qualified: Option<Candidate> = None;
    let mut overall: Option<Candidate> = None;
    let n_chunks = total.div_ceil(SEARCH_CHUNK);
    let mut chunk = 0;
    while chunk < n_chunks {
        let upto = (chunk + SEARCH_BLOCK).min(n_chunks);
        let results: Vec<Result<(Option<Candidate>, Option<Candidate>, Vec<SearchRow>)>> = (chunk
            ..upto)
            .into_par_iter()
            .map(|c| {
                let mut q = None;
                let mut o = None;
                let mut rows = Vec::new();
                let start = c * SEARCH_CHUNK;
                let end = (start + SEARCH_CHUNK).min(total);
                for index in start..end {
                    let point = grid.point(index);
                    let mut params = template.clone();
                    for (axis, &v) in grid.axes.iter().zip(&point) {
                        params.set(&axis.name, v)?;
                    }
                    let e = build(ctx, &params, phase)?.evaluate(ctx)?;
                    let cand = Candidate {
                        index,
                        fidelity: e.fidelity,
                        duration: e.duration,
                    };
                    if threshold > 0.0 && e.fidelity >= threshold * bound {
                        pick(&mut q, &cand, shorter);
                    }
                    pick(&mut o, &cand, fitter);
                    if want_rows {
                        rows.push(SearchRow {
                            point,
                            fidelity: e.fidelity,
                            duration: e.duration,
                        });
                    }
                }
                Ok((q, o, rows))
            })
            .collect();
        for r in results {
            let (q, o, rows) = r?;
            if let Some(q) = q {
                pick(&mut qualified, &q, shorter);
            }
            if let Some(o) = o {
                pick(&mut overall, &o, fitter);
            }
            if let Some(sink) = sink.as_mut() {
                for row in &rows {
                    sink(row)?;
                }
            }
        }
        chunk = upto;
    }

    let met = qualified.is_some();
    let best = qualified.or(overall).expect("grid has at least one point");
    let point = grid.point(best.index);
    let mut params = template.clone();
    for (axis, &v) in grid.axes.iter().zip(&point) {
        params.set(&axis.name, v)?;
    }
    Ok(SearchOutcome {
        params,
        point,
        fidelity: best.fidelity,
        bound,
        duration: best.duration,
        met_threshold: met,
        n_points: total,
    })
}
