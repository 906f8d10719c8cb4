//! Spin-dynamics simulation and QAOA pulse-sequence design for converting
//! magnetization into long-lived singlet order and back.
//!
//! The crate covers the operator algebra ([`spin`]), rotating-frame
//! Hamiltonians ([`hamiltonian`]), exact piecewise-constant propagation
//! ([`propagation`]), fidelity and cost ([`objective`]), the QAOA optimizer
//! ([`qaoa`]) with its derivative-free local search ([`cobyla`]), benchmark
//! sequences ([`baseline`]), parameter sweeps ([`sweep`]), decay fitting
//! ([`decay`]) and config-driven experiments ([`config`], [`experiment`]).

pub mod baseline;
pub mod cobyla;
pub mod config;
pub mod decay;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod objective;
pub mod output;
pub mod propagation;
pub mod qaoa;
pub mod spin;
pub mod sweep;

pub use baseline::{
    brute_force_search, BaselineContext, BaselineParams, BaselineSequence, GridAxis, Method, Phase,
    Ramp, SearchGrid, SearchOutcome,
};
pub use cobyla::{Cobyla, CobylaSettings, LocalOptimizer};
pub use config::{ExperimentConfig, ExperimentKind};
pub use decay::{fit_exponential_decay, DecayFit, DecaySeries};
pub use error::{Error, Result};
pub use experiment::{run_experiment, RunOptions, RunSummary};
pub use hamiltonian::{
    build_h0, build_hb, build_target, thermal_and_initial_states, ControlParams, SpinSystem,
    TargetKind, TargetOperator,
};
pub use objective::{fidelity, scalarized_cost, unitary_bound, CostConfig};
pub use propagation::{
    apply_hard_rotation, bloch_project, propagate, run_schedule, Axis, Hamiltonian, HardPulseMode,
    HardRotation, PropagatorCache, PulseSchedule, PulseSegment, Recording, TrajectoryPoint,
};
pub use qaoa::{
    evaluate_schedule, optimize, Direction, DurationBounds, InitialKind, OptimResult,
    OptimizerSettings, QaoaProblem, QaoaSpec,
};
pub use spin::{
    build_spin_operators, product_ket, scalar_product_operator, singlet_triplet_basis, Component,
    DeviationState, OperatorMatrix, SingletTripletBasis, SpinOperators, TripletPartner, C64,
    CMatrix,
};
pub use sweep::{
    heatmap, robustness_map, total_protocol_map, HeatmapResult, SweepAxis, SweepGrid, SweepMode,
    SweepSettings,
};
