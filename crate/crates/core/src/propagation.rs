//! Unitary propagation of deviation density matrices.
//!
//! Each piecewise-constant segment is exponentiated exactly through the
//! Hermitian eigendecomposition of its Hamiltonian, U = V diag(e^{−iλt}) V†.
//! Decompositions are computed once per [`Hamiltonian`] and propagators can be
//! memoized in a [`PropagatorCache`] shared between workers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use nalgebra::SymmetricEigen;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::fidelity;
use crate::output::fmt_float;
use crate::spin::{
    reduce_to_pair, CMatrix, Component, DeviationState, OperatorMatrix, SingletTripletBasis,
    SpinOperators, TripletPartner, C64,
};

static NEXT_HAMILTONIAN_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
struct Eigen {
    vectors: CMatrix,
    values: Vec<f64>,
}

/// A Hermitian generator (rad/s) with a lazily computed eigendecomposition.
///
/// Every instance gets a process-unique id, which is what the propagator
/// cache keys on.
#[derive(Debug)]
pub struct Hamiltonian {
    id: u64,
    op: OperatorMatrix,
    eigen: OnceLock<std::result::Result<Eigen, String>>,
}

impl Hamiltonian {
    pub fn new(op: OperatorMatrix) -> Result<Self> {
        if !op.is_hermitian() {
            return Err(Error::NotHermitian(op.hermiticity_error()));
        }
        Ok(Self {
            id: NEXT_HAMILTONIAN_ID.fetch_add(1, Ordering::Relaxed),
            op,
            eigen: OnceLock::new(),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn operator(&self) -> &OperatorMatrix {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    fn eigen(&self) -> Result<&Eigen> {
        let slot = self.eigen.get_or_init(|| {
            let m = self.op.entries().clone();
            match SymmetricEigen::try_new(m, 1e-15, 10_000) {
                Some(eig) => Ok(Eigen {
                    values: eig.eigenvalues.iter().copied().collect(),
                    vectors: eig.eigenvectors,
                }),
                None => Err(format!(
                    "eigendecomposition did not converge (dim {}, max|H| = {:.3e} rad/s)",
                    self.op.dim(),
                    self.op.max_abs()
                )),
            }
        });
        slot.as_ref().map_err(|msg| Error::Numerical(msg.clone()))
    }

    /// Eigenvalues in rad/s, in the order produced by the decomposition.
    pub fn eigenvalues(&self) -> Result<&[f64]> {
        Ok(&self.eigen()?.values)
    }

    /// exp(−iHt).
    pub fn propagator(&self, t: f64) -> Result<CMatrix> {
        check_duration(t)?;
        let eig = self.eigen()?;
        let v = &eig.vectors;
        let mut scaled = v.clone();
        for (k, &lambda) in eig.values.iter().enumerate() {
            let phase = C64::from_polar(1.0, -lambda * t);
            for r in 0..scaled.nrows() {
                scaled[(r, k)] *= phase;
            }
        }
        Ok(scaled * v.adjoint())
    }
}

fn check_duration(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::NegativeDuration(t));
    }
    Ok(())
}

/// Memoized propagators keyed on (Hamiltonian id, duration bits).
///
/// Reads take a shared lock; inserts take the exclusive lock. Once the entry
/// limit is reached new propagators are still returned but no longer stored.
#[derive(Debug)]
pub struct PropagatorCache {
    map: RwLock<HashMap<(u64, u64), Arc<CMatrix>>>,
    max_entries: usize,
}

impl Default for PropagatorCache {
    fn default() -> Self {
        Self::with_capacity(1 << 16)
    }
}

impl PropagatorCache {
    pub fn with_capacity(max_entries: usize) -> Self {
        Self {
            map: RwLock::new(HashMap::new()),
            max_entries,
        }
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(&self, h: &Hamiltonian, t: f64) -> Result<Arc<CMatrix>> {
        let key = (h.id(), t.to_bits());
        if let Some(u) = self.map.read().get(&key) {
            return Ok(Arc::clone(u));
        }
        let u = Arc::new(h.propagator(t)?);
        let mut map = self.map.write();
        if map.len() < self.max_entries {
            map.entry(key).or_insert_with(|| Arc::clone(&u));
        }
        Ok(u)
    }
}

/// U ρ U† for a unitary U.
fn conjugate(state: &DeviationState, u: &CMatrix) -> DeviationState {
    let m = state.matrix().conjugate_by(u);
    DeviationState::from_trusted(m, state.label().to_string())
}

/// Evolves `state` under `h` for `t` seconds.
pub fn propagate(state: &DeviationState, h: &Hamiltonian, t: f64) -> Result<DeviationState> {
    if state.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: state.dim(),
        });
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    let u = h.propagator(t)?;
    Ok(conjugate(state, &u))
}

/// Rotation axis of an instantaneous pulse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Ideal global rotation exp(−i·angle·n·I). For transverse axes the phase
/// (radians) turns the axis about z, so `X` with phase π is a −x pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardRotation {
    pub axis: Axis,
    pub angle: f64,
    pub phase: f64,
}

impl HardRotation {
    pub fn new(axis: Axis, angle: f64, phase: f64) -> Self {
        Self { axis, angle, phase }
    }

    pub fn x(angle: f64) -> Self {
        Self::new(Axis::X, angle, 0.0)
    }

    pub fn y(angle: f64) -> Self {
        Self::new(Axis::Y, angle, 0.0)
    }

    pub fn minus_x(angle: f64) -> Self {
        Self::new(Axis::X, angle, PI)
    }

    pub fn minus_y(angle: f64) -> Self {
        Self::new(Axis::Y, angle, PI)
    }

    /// Unit rotation axis (n_x, n_y, n_z).
    pub fn direction(&self) -> [f64; 3] {
        match self.axis {
            Axis::Z => [0.0, 0.0, 1.0],
            Axis::X | Axis::Y => {
                let base = if self.axis == Axis::X { 0.0 } else { PI / 2.0 };
                let phi = base + self.phase;
                [phi.cos(), phi.sin(), 0.0]
            }
        }
    }

    /// n·I on the full space.
    pub fn generator(&self, ops: &SpinOperators) -> OperatorMatrix {
        let n = self.direction();
        let mut acc = OperatorMatrix::zeros(ops.dim());
        for (c, w) in Component::ALL.into_iter().zip(n) {
            if w != 0.0 {
                acc = &acc + &ops.total(c).scale(w);
            }
        }
        acc
    }

    /// Tensor power of the single-spin rotation cos(θ/2)𝟙 − i sin(θ/2) n·σ.
    pub fn unitary(&self, n_spins: usize) -> CMatrix {
        let [nx, ny, nz] = self.direction();
        let (s, c) = (self.angle / 2.0).sin_cos();
        let single = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(c, -s * nz),
                C64::new(-s * ny, -s * nx),
                C64::new(s * ny, -s * nx),
                C64::new(c, s * nz),
            ],
        );
        let mut u = CMatrix::identity(1, 1);
        for _ in 0..n_spins {
            u = u.kronecker(&single);
        }
        u
    }
}

/// Applies an instantaneous ideal rotation by conjugation.
pub fn apply_hard_rotation(state: &DeviationState, rotation: &HardRotation) -> DeviationState {
    let u = rotation.unitary(state.matrix().n_spins());
    conjugate(state, &u)
}

/// How hard pulses are realized when a sequence is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HardPulseMode {
    /// Instantaneous rotations of zero duration.
    #[default]
    Ideal,
    /// Rectangular pulses at `rf_amplitude_hz` applied on top of the free
    /// Hamiltonian, lasting angle/(2π·amplitude).
    Finite { rf_amplitude_hz: f64 },
}

/// A constant Hamiltonian applied for `duration` seconds.
#[derive(Clone, Debug)]
pub struct PulseSegment {
    pub hamiltonian: Arc<Hamiltonian>,
    pub duration: f64,
}

impl PulseSegment {
    pub fn new(hamiltonian: Arc<Hamiltonian>, duration: f64) -> Result<Self> {
        check_duration(duration)?;
        Ok(Self {
            hamiltonian,
            duration,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Step {
    Evolve(PulseSegment),
    Rotate(HardRotation),
}

/// Ordered list of segments and instantaneous rotations.
#[derive(Clone, Debug)]
pub struct PulseSchedule {
    n_spins: usize,
    steps: Vec<Step>,
}

impl PulseSchedule {
    pub fn new(n_spins: usize) -> Self {
        Self {
            n_spins,
            steps: Vec::new(),
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push_segment(&mut self, hamiltonian: Arc<Hamiltonian>, duration: f64) -> Result<()> {
        if hamiltonian.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: hamiltonian.dim(),
            });
        }
        self.steps
            .push(Step::Evolve(PulseSegment::new(hamiltonian, duration)?));
        Ok(())
    }

    pub fn push_rotation(&mut self, rotation: HardRotation) {
        self.steps.push(Step::Rotate(rotation));
    }

    /// Adds a hard pulse, either as an ideal rotation or as a finite
    /// rectangular pulse on top of `free` (z rotations are always ideal).
    pub fn push_pulse(
        &mut self,
        rotation: HardRotation,
        mode: HardPulseMode,
        free: &OperatorMatrix,
        ops: &SpinOperators,
    ) -> Result<()> {
        match mode {
            HardPulseMode::Finite { rf_amplitude_hz } if rotation.axis != Axis::Z => {
                if !(rf_amplitude_hz.is_finite() && rf_amplitude_hz > 0.0) {
                    return Err(Error::validation(
                        "rf_amplitude_hz",
                        format!("{rf_amplitude_hz} (must be > 0)"),
                    ));
                }
                let omega = 2.0 * PI * rf_amplitude_hz;
                let (angle, rotation) = if rotation.angle < 0.0 {
                    let flipped = HardRotation {
                        phase: rotation.phase + PI,
                        ..rotation
                    };
                    (-rotation.angle, flipped)
                } else {
                    (rotation.angle, rotation)
                };
                let h = free + &rotation.generator(ops).scale(omega);
                self.push_segment(Arc::new(Hamiltonian::new(h)?), angle / omega)
            }
            _ => {
                self.push_rotation(rotation);
                Ok(())
            }
        }
    }

    pub fn extend(&mut self, other: &PulseSchedule) -> Result<()> {
        if other.n_spins != self.n_spins {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        self.steps.extend(other.steps.iter().cloned());
        Ok(())
    }

    /// Σ segment durations; ideal rotations take no time.
    pub fn total_duration(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Evolve(seg) => seg.duration,
                Step::Rotate(_) => 0.0,
            })
            .sum()
    }

    pub fn n_segments(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Evolve(_)))
            .count()
    }

    /// Product of all step unitaries, last step leftmost.
    pub fn unitary(&self, cache: Option<&PropagatorCache>) -> Result<CMatrix> {
        let mut total = CMatrix::identity(self.dim(), self.dim());
        for step in &self.steps {
            let u = step_unitary(step, self.n_spins, cache)?;
            total = &*u * total;
        }
        Ok(total)
    }
}

fn step_unitary(step: &Step, n_spins: usize, cache: Option<&PropagatorCache>) -> Result<Arc<CMatrix>> {
    match step {
        Step::Evolve(seg) => match cache {
            Some(c) => c.get_or_compute(&seg.hamiltonian, seg.duration),
            None => Ok(Arc::new(seg.hamiltonian.propagator(seg.duration)?)),
        },
        Step::Rotate(rot) => Ok(Arc::new(rot.unitary(n_spins))),
    }
}

/// How densely [`run_schedule`] records intermediate states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    /// Sub-steps of at most this many seconds.
    Every(f64),
    /// This many equal sub-steps per segment.
    StepsPerSegment(usize),
}

impl Default for Recording {
    fn default() -> Self {
        Recording::StepsPerSegment(50)
    }
}

impl Recording {
    fn substeps(&self, duration: f64) -> Result<usize> {
        match *self {
            Recording::Every(dt) => {
                if !(dt.is_finite() && dt > 0.0) {
                    return Err(Error::validation("record_every", format!("{dt} (must be > 0)")));
                }
                Ok(((duration / dt).ceil() as usize).max(1))
            }
            Recording::StepsPerSegment(n) => Ok(n.max(1)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub time: f64,
    pub state: DeviationState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleWarning {
    EmptySchedule,
}

#[derive(Clone, Debug)]
pub struct ScheduleOutput {
    pub state: DeviationState,
    /// Recorded states, starting with the input at t = 0. Empty when
    /// recording was off.
    pub samples: Vec<Sample>,
    pub warning: Option<ScheduleWarning>,
}

/// Applies the schedule's steps in order.
pub fn run_schedule(
    state: &DeviationState,
    schedule: &PulseSchedule,
    recording: Option<Recording>,
    cache: Option<&PropagatorCache>,
) -> Result<ScheduleOutput> {
    if state.dim() != schedule.dim() {
        return Err(Error::DimensionMismatch {
            expected: schedule.dim(),
            found: state.dim(),
        });
    }
    let warning = schedule.is_empty().then_some(ScheduleWarning::EmptySchedule);
    let mut current = state.clone();
    let mut samples = Vec::new();
    let Some(recording) = recording else {
        for step in schedule.steps() {
            if let Step::Evolve(seg) = step {
                if seg.duration == 0.0 {
                    continue;
                }
            }
            let u = step_unitary(step, schedule.n_spins(), cache)?;
            current = conjugate(&current, &u);
        }
        return Ok(ScheduleOutput {
            state: current,
            samples,
            warning,
        });
    };

    let mut time = 0.0;
    samples.push(Sample {
        time,
        state: current.clone(),
    });
    for step in schedule.steps() {
        match step {
            Step::Evolve(seg) => {
                if seg.duration == 0.0 {
                    continue;
                }
                let k = recording.substeps(seg.duration)?;
                let dt = seg.duration / k as f64;
                let u = match cache {
                    Some(c) => c.get_or_compute(&seg.hamiltonian, dt)?,
                    None => Arc::new(seg.hamiltonian.propagator(dt)?),
                };
                let start = time;
                for i in 1..=k {
                    current = conjugate(&current, &u);
                    time = start + dt * i as f64;
                    samples.push(Sample {
                        time,
                        state: current.clone(),
                    });
                }
                time = start + seg.duration;
            }
            Step::Rotate(rot) => {
                current = apply_hard_rotation(&current, rot);
                samples.push(Sample {
                    time,
                    state: current.clone(),
                });
            }
        }
    }
    Ok(ScheduleOutput {
        state: current,
        samples,
        warning,
    })
}

fn pair_block(state: &OperatorMatrix, basis: &SingletTripletBasis) -> Result<CMatrix> {
    let n = state.n_spins();
    if n < 2 {
        return Err(Error::InvalidPair(basis.pair.0, basis.pair.1, n));
    }
    reduce_to_pair(state, basis.pair)
}

fn sandwich(bra: &crate::spin::CVector, m: &CMatrix, ket: &crate::spin::CVector) -> C64 {
    (bra.adjoint() * m * ket)[(0, 0)]
}

/// Projects a state onto the two-level subspace {|S₀⟩, |partner⟩} and
/// returns (2 Re ρ₀₁, 2 Im ρ₁₀, ρ₀₀ − ρ₁₁), with index 0 the singlet.
///
/// For more than two spins the state is first reduced to the basis pair by
/// partial trace.
pub fn bloch_project(
    state: &DeviationState,
    basis: &SingletTripletBasis,
    partner: TripletPartner,
) -> Result<[f64; 3]> {
    let block = pair_block(state.matrix(), basis)?;
    let (s, p) = (&basis.s0, basis.partner(partner));
    let r01 = sandwich(s, &block, p);
    let r10 = sandwich(p, &block, s);
    let r00 = sandwich(s, &block, s).re;
    let r11 = sandwich(p, &block, p).re;
    Ok([2.0 * r01.re, 2.0 * r10.im, r00 - r11])
}

/// Bloch vector of the full density matrix ρ = background·𝟙 + ρ_Δ restricted
/// to {|S₀⟩, |partner⟩} and normalized by that subspace's population, so the
/// result has length ≤ 1 whenever ρ is a valid density matrix. `background`
/// is the identity weight per level of the full space (1/dim for a pure
/// state). Returns zeros when the subspace is empty.
pub fn bloch_project_normalized(
    state: &DeviationState,
    basis: &SingletTripletBasis,
    partner: TripletPartner,
    background: f64,
) -> Result<[f64; 3]> {
    let raw = bloch_project(state, basis, partner)?;
    let block = pair_block(state.matrix(), basis)?;
    let (s, p) = (&basis.s0, basis.partner(partner));
    // Tracing out the spectators multiplies the identity weight by their
    // dimension.
    let spectators = (state.dim() / 4) as f64;
    let population = sandwich(s, &block, s).re + sandwich(p, &block, p).re
        + 2.0 * background * spectators;
    if population <= 1e-15 {
        return Ok([0.0; 3]);
    }
    Ok(raw.map(|v| v / population))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub bloch_vectors: Vec<(TripletPartner, [f64; 3])>,
    pub fidelity_to_target: f64,
}

/// Which spheres to project on and how to normalize them.
#[derive(Clone, Debug)]
pub struct TrajectoryProbe {
    pub basis: SingletTripletBasis,
    pub partners: Vec<TripletPartner>,
    /// Identity weight per level; `None` reports raw deviation projections.
    pub background: Option<f64>,
}

pub fn trajectory_points(
    samples: &[Sample],
    target: &DeviationState,
    probe: &TrajectoryProbe,
) -> Result<Vec<TrajectoryPoint>> {
    samples
        .iter()
        .map(|s| {
            let bloch_vectors = probe
                .partners
                .iter()
                .map(|&p| {
                    let v = match probe.background {
                        Some(bg) => bloch_project_normalized(&s.state, &probe.basis, p, bg)?,
                        None => bloch_project(&s.state, &probe.basis, p)?,
                    };
                    Ok((p, v))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrajectoryPoint {
                time: s.time,
                bloch_vectors,
                fidelity_to_target: fidelity(&s.state, target)?,
            })
        })
        .collect()
}

/// CSV with columns time_s, sphere_label, x, y, z, fidelity; one row per
/// point and sphere.
pub fn write_trajectory_csv<W: Write>(writer: W, points: &[TrajectoryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_s", "sphere_label", "x", "y", "z", "fidelity"])?;
    for p in points {
        for (partner, v) in &p.bloch_vectors {
            w.write_record([
                fmt_float(p.time),
                partner.label().to_string(),
                fmt_float(v[0]),
                fmt_float(v[1]),
                fmt_float(v[2]),
                fmt_float(p.fidelity_to_target),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("trajectory csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{build_spin_operators, max_abs};

    fn ops2() -> SpinOperators {
        build_spin_operators(2).unwrap()
    }

    fn state(op: &OperatorMatrix) -> DeviationState {
        DeviationState::new(op.clone(), "s").unwrap()
    }

    #[test]
    fn propagator_is_unitary_and_reconstructs_h() {
        let ops = ops2();
        let h = &ops.total(Component::X).scale(2.0 * PI * 40.0)
            + &ops.scalar_product(0, 1).unwrap().scale(2.0 * PI * 17.2);
        let ham = Hamiltonian::new(h.clone()).unwrap();
        let u = ham.propagator(0.0123).unwrap();
        let eye = CMatrix::identity(4, 4);
        assert!(max_abs(&(&u * u.adjoint() - eye)) < 1e-13);
        let eig = ham.eigen().unwrap();
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            4,
            eig.values.iter().map(|&v| C64::new(v, 0.0)),
        ));
        let back = &eig.vectors * d * eig.vectors.adjoint();
        assert!(max_abs(&(back - h.entries())) < 1e-10);
    }

    #[test]
    fn y_pulse_takes_z_to_x() {
        let ops = ops2();
        let ham = Hamiltonian::new(ops.total(Component::Y).scale(-2.0 * PI * 100.0)).unwrap();
        // Rotation by +π/2 about −y sends z to −x; the spec'd generator
        // −2πν I^y with t = 1/(4ν) therefore gives exp(+i(π/2)I^y).
        let out = propagate(&state(ops.total(Component::Z)), &ham, 0.0025).unwrap();
        assert!(out.matrix().max_abs_diff(&ops.total(Component::X).scale(-1.0)) < 1e-10);
    }

    #[test]
    fn rotation_unitary_matches_exponential() {
        let ops = ops2();
        for rot in [
            HardRotation::x(0.7),
            HardRotation::y(-1.3),
            HardRotation::minus_x(2.1),
            HardRotation::new(Axis::Z, 0.4, 0.0),
            HardRotation::new(Axis::X, 1.0, 0.3),
        ] {
            let ham = Hamiltonian::new(rot.generator(&ops).scale(rot.angle.abs())).unwrap();
            let mut u = ham.propagator(1.0).unwrap();
            if rot.angle < 0.0 {
                u = u.adjoint();
            }
            assert!(max_abs(&(u - rot.unitary(2))) < 1e-12, "{rot:?}");
        }
    }

    #[test]
    fn hard_rotation_examples() {
        let ops = ops2();
        let iz = state(ops.total(Component::Z));
        let out = apply_hard_rotation(&iz, &HardRotation::y(PI / 2.0));
        assert!(out.matrix().max_abs_diff(ops.total(Component::X)) < 1e-12);
        let full = apply_hard_rotation(&iz, &HardRotation::x(2.0 * PI));
        assert!(full.matrix().max_abs_diff(iz.matrix()) < 1e-12);
    }

    #[test]
    fn cache_returns_same_propagator() {
        let ops = ops2();
        let ham = Hamiltonian::new(ops.total(Component::X).scale(3.0)).unwrap();
        let cache = PropagatorCache::default();
        let a = cache.get_or_compute(&ham, 0.5).unwrap();
        let b = cache.get_or_compute(&ham, 0.5).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
        let full = PropagatorCache::with_capacity(0);
        full.get_or_compute(&ham, 0.5).unwrap();
        assert!(full.is_empty());
    }

    #[test]
    fn negative_duration_rejected() {
        let ops = ops2();
        let ham = Arc::new(Hamiltonian::new(ops.total(Component::X).clone()).unwrap());
        let mut s = PulseSchedule::new(2);
        assert!(matches!(
            s.push_segment(ham, -1e-3),
            Err(Error::NegativeDuration(_))
        ));
    }

    #[test]
    fn finite_pulse_with_zero_background_equals_ideal() {
        let ops = ops2();
        let zero = OperatorMatrix::zeros(4);
        let mut s = PulseSchedule::new(2);
        let rot = HardRotation::minus_y(PI / 2.0);
        s.push_pulse(rot, HardPulseMode::Finite { rf_amplitude_hz: 25_000.0 }, &zero, &ops)
            .unwrap();
        assert!((s.total_duration() - 1e-5).abs() < 1e-15);
        let u = s.unitary(None).unwrap();
        assert!(max_abs(&(u - rot.unitary(2))) < 1e-12);
    }

    #[test]
    fn empty_schedule_warns() {
        let ops = ops2();
        let s = PulseSchedule::new(2);
        let out = run_schedule(&state(ops.total(Component::X)), &s, None, None).unwrap();
        assert_eq!(out.warning, Some(ScheduleWarning::EmptySchedule));
        assert!(out.state.matrix().max_abs_diff(ops.total(Component::X)) == 0.0);
    }

    #[test]
    fn bloch_of_singlet_order_and_thermal() {
        let ops = ops2();
        let basis = crate::spin::singlet_triplet_basis((0, 1), 2).unwrap();
        let so = &ops.singlet_projector(0, 1).unwrap() - &ops.identity().scale(0.25);
        let v = bloch_project(&state(&so), &basis, TripletPartner::T0).unwrap();
        assert!(v[2] > 0.0 && v[0].abs() < 1e-14 && v[1].abs() < 1e-14);
        let t = bloch_project(&state(ops.total(Component::Z)), &basis, TripletPartner::T0).unwrap();
        assert!(t.iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn normalized_bloch_of_pure_states_has_unit_length() {
        let basis = crate::spin::singlet_triplet_basis((0, 1), 2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let ket = (&basis.s0 + &basis.t0) * C64::new(r, 0.0);
        let (s, bg) = DeviationState::from_pure_ket(&ket, "sup").unwrap();
        let v = bloch_project_normalized(&s, &basis, TripletPartner::T0, bg).unwrap();
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!((len - 1.0).abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-12);
    }
}
