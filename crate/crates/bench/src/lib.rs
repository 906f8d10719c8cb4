//! Shared fixtures for the criterion benchmarks.

use lls_qaoa::{ControlParams, QaoaProblem, QaoaSpec, SpinSystem};

pub const TABLE_II_GAMMAS: [f64; 2] = [14.069e-3, 6.810e-3];
pub const TABLE_II_BETAS: [f64; 2] = [3.452e-3, 0.025e-3];

/// Two-spin magnetization to singlet order with `layers` layers.
pub fn moderate(layers: usize) -> QaoaProblem {
    QaoaProblem::new(QaoaSpec::m_to_s(
        SpinSystem::moderate(),
        layers,
        ControlParams::new(100.0, 0.0).unwrap(),
    ))
    .unwrap()
}

/// A coupled chain of `n` spins with distinct offsets.
pub fn chain(n: usize, layers: usize) -> QaoaProblem {
    let offsets = (0..n).map(|i| 40.0 * i as f64 - 20.0 * n as f64).collect();
    let mut j = vec![vec![0.0; n]; n];
    for i in 0..n - 1 {
        j[i][i + 1] = 15.0;
        j[i + 1][i] = 15.0;
    }
    let sys = SpinSystem::new(offsets, j).unwrap();
    QaoaProblem::new(QaoaSpec::m_to_s(sys, layers, ControlParams::new(100.0, 0.0).unwrap())).unwrap()
}
