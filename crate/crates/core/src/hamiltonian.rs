//! Rotating-frame Hamiltonians, control terms and target operators.
//!
//! Hamiltonians are returned in angular-frequency units (rad/s). Everything
//! crossing the API boundary (offsets, couplings, RF amplitude and offset)
//! is in Hz.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{
    CMatrix, Component, DeviationState, OperatorMatrix, SpinOperators, C64, MAX_SPINS,
};

/// Chemical-shift offsets and scalar couplings, both in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    offsets_hz: Vec<f64>,
    j_couplings_hz: Vec<Vec<f64>>,
}

impl SpinSystem {
    pub fn new(offsets_hz: Vec<f64>, j_couplings_hz: Vec<Vec<f64>>) -> Result<Self> {
        let n = offsets_hz.len();
        if n == 0 || n > MAX_SPINS {
            return Err(Error::DimensionLimit(n));
        }
        if let Some(bad) = offsets_hz.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation("offsets_hz", format!("non-finite entry {bad}")));
        }
        if j_couplings_hz.len() != n {
            return Err(Error::LengthMismatch {
                what: "j_couplings_hz",
                expected: n,
                found: j_couplings_hz.len(),
            });
        }
        for (i, row) in j_couplings_hz.iter().enumerate() {
            if row.len() != n {
                return Err(Error::LengthMismatch {
                    what: "j_couplings_hz row",
                    expected: n,
                    found: row.len(),
                });
            }
            if row[i] != 0.0 {
                return Err(Error::validation(
                    "j_couplings_hz",
                    format!("diagonal entry {i} is {} (must be 0)", row[i]),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::validation(
                        "j_couplings_hz",
                        format!("non-finite entry at ({i}, {j})"),
                    ));
                }
                if v != j_couplings_hz[j][i] {
                    return Err(Error::validation(
                        "j_couplings_hz",
                        format!("not symmetric at ({i}, {j}): {v} vs {}", j_couplings_hz[j][i]),
                    ));
                }
            }
        }
        Ok(Self {
            offsets_hz,
            j_couplings_hz,
        })
    }

    /// Two-spin system with offsets (−δ/2, +δ/2), which reproduces the
    /// −πδ(I^z_1 − I^z_2) shift term.
    pub fn two_spin(delta_hz: f64, j_hz: f64) -> Result<Self> {
        Self::new(
            vec![-delta_hz / 2.0, delta_hz / 2.0],
            vec![vec![0.0, j_hz], vec![j_hz, 0.0]],
        )
    }

    /// δ = 35.8 Hz, J = 17.2 Hz.
    pub fn moderate() -> Self {
        Self::two_spin(35.8, 17.2).expect("preset is valid")
    }

    /// δ = 10 Hz, J = 18 Hz.
    pub fn strong() -> Self {
        Self::two_spin(10.0, 18.0).expect("preset is valid")
    }

    /// δ = 10 Hz, J = 54 Hz.
    pub fn very_strong() -> Self {
        Self::two_spin(10.0, 54.0).expect("preset is valid")
    }

    /// Looks up one of the named two-spin presets.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "moderate" => Some(Self::moderate()),
            "strong" => Some(Self::strong()),
            "very_strong" | "very-strong" => Some(Self::very_strong()),
            _ => None,
        }
    }

    pub fn n_spins(&self) -> usize {
        self.offsets_hz.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins()
    }

    pub fn offsets_hz(&self) -> &[f64] {
        &self.offsets_hz
    }

    pub fn j_couplings_hz(&self) -> &[Vec<f64>] {
        &self.j_couplings_hz
    }

    pub fn j_hz(&self, i: usize, j: usize) -> f64 {
        self.j_couplings_hz[i][j]
    }

    /// Largest |J_ij|; zero for an uncoupled system.
    pub fn max_coupling_hz(&self) -> f64 {
        self.j_couplings_hz
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Chemical shift difference of a two-spin system, offset_2 − offset_1.
    pub fn shift_difference_hz(&self) -> Option<f64> {
        (self.n_spins() == 2).then(|| self.offsets_hz[1] - self.offsets_hz[0])
    }

    fn check_ops(&self, ops: &SpinOperators) -> Result<()> {
        if ops.n_spins() != self.n_spins() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: ops.dim(),
            });
        }
        Ok(())
    }
}

/// RF amplitude ν and RF frequency offset Δ, in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub nu_hz: f64,
    pub delta_off_hz: f64,
}

impl ControlParams {
    pub fn new(nu_hz: f64, delta_off_hz: f64) -> Result<Self> {
        if !(nu_hz.is_finite() && nu_hz >= 0.0) {
            return Err(Error::validation("nu_hz", format!("{nu_hz} (must be finite and >= 0)")));
        }
        if !delta_off_hz.is_finite() {
            return Err(Error::validation("delta_off_hz", "must be finite"));
        }
        Ok(Self {
            nu_hz,
            delta_off_hz,
        })
    }

    pub fn off() -> Self {
        Self {
            nu_hz: 0.0,
            delta_off_hz: 0.0,
        }
    }
}

/// H₀ = Σ_i 2π·offset_i·I^z_i + Σ_{i<j} 2π·J_ij·I_i·I_j, in rad/s.
pub fn build_h0(system: &SpinSystem, ops: &SpinOperators) -> Result<OperatorMatrix> {
    system.check_ops(ops)?;
    let n = system.n_spins();
    let dim = system.dim();
    let mut h = CMatrix::zeros(dim, dim);
    for (i, &off) in system.offsets_hz().iter().enumerate() {
        if off != 0.0 {
            h += ops.spin(i, Component::Z).entries() * C64::new(2.0 * PI * off, 0.0);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let jij = system.j_hz(i, j);
            if jij != 0.0 {
                h += ops.scalar_product(i, j)?.entries() * C64::new(2.0 * PI * jij, 0.0);
            }
        }
    }
    Ok(OperatorMatrix::from_parts(h, true))
}

/// H_B = H₀ − 2πν I^x − 2πΔ I^z, in rad/s.
pub fn build_hb(
    h0: &OperatorMatrix,
    ops: &SpinOperators,
    ctrl: ControlParams,
) -> Result<OperatorMatrix> {
    if h0.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            found: h0.dim(),
        });
    }
    if !h0.is_hermitian() {
        return Err(Error::NotHermitian(h0.hermiticity_error()));
    }
    let mut h = h0.entries().clone();
    if ctrl.nu_hz != 0.0 {
        h -= ops.total(Component::X).entries() * C64::new(2.0 * PI * ctrl.nu_hz, 0.0);
    }
    if ctrl.delta_off_hz != 0.0 {
        h -= ops.total(Component::Z).entries() * C64::new(2.0 * PI * ctrl.delta_off_hz, 0.0);
    }
    Ok(OperatorMatrix::from_parts(h, true))
}

/// Which operator a transfer aims at. Spin indices are zero-based.
#[derive(Clone, Debug)]
pub enum TargetKind {
    /// −I_a·I_b.
    SingletOrder(usize, usize),
    /// Σ over pairs of −I_a·I_b.
    PairwiseSingletSum(Vec<(usize, usize)>),
    /// I^x_a I^z_b − I^z_a I^x_b.
    AntiphaseMagnetization(usize, usize),
    /// Σ_i I^x_i.
    TransverseMagnetization,
    /// Σ_i I^z_i.
    LongitudinalMagnetization,
    /// User-supplied Hermitian, traceless matrix.
    Custom(OperatorMatrix),
}

impl TargetKind {
    pub fn label(&self) -> String {
        match self {
            TargetKind::SingletOrder(a, b) => format!("singlet_order({},{})", a + 1, b + 1),
            TargetKind::PairwiseSingletSum(pairs) => {
                let body: Vec<String> = pairs
                    .iter()
                    .map(|(a, b)| format!("({},{})", a + 1, b + 1))
                    .collect();
                format!("pairwise_singlet_sum[{}]", body.join(","))
            }
            TargetKind::AntiphaseMagnetization(a, b) => {
                format!("antiphase_magnetization({},{})", a + 1, b + 1)
            }
            TargetKind::TransverseMagnetization => "transverse_magnetization".to_string(),
            TargetKind::LongitudinalMagnetization => "longitudinal_magnetization".to_string(),
            TargetKind::Custom(_) => "custom".to_string(),
        }
    }
}

/// A target operator together with the kind it was built from.
#[derive(Clone, Debug)]
pub struct TargetOperator {
    pub kind: TargetKind,
    pub state: DeviationState,
}

impl TargetOperator {
    pub fn matrix(&self) -> &OperatorMatrix {
        self.state.matrix()
    }
}

pub fn build_target(kind: TargetKind, ops: &SpinOperators) -> Result<TargetOperator> {
    let matrix = match &kind {
        TargetKind::SingletOrder(a, b) => -&ops.scalar_product(*a, *b)?,
        TargetKind::PairwiseSingletSum(pairs) => {
            if pairs.is_empty() {
                return Err(Error::validation("target.pairs", "empty pair list"));
            }
            let mut acc = OperatorMatrix::zeros(ops.dim());
            for &(a, b) in pairs {
                acc = &acc - &ops.scalar_product(a, b)?;
            }
            acc
        }
        TargetKind::AntiphaseMagnetization(a, b) => {
            ops.check_pair(*a, *b)?;
            let xz = ops.spin(*a, Component::X).matmul(ops.spin(*b, Component::Z));
            let zx = ops.spin(*a, Component::Z).matmul(ops.spin(*b, Component::X));
            &xz - &zx
        }
        TargetKind::TransverseMagnetization => ops.total(Component::X).clone(),
        TargetKind::LongitudinalMagnetization => ops.total(Component::Z).clone(),
        TargetKind::Custom(m) => {
            if m.dim() != ops.dim() {
                return Err(Error::DimensionMismatch {
                    expected: ops.dim(),
                    found: m.dim(),
                });
            }
            m.clone()
        }
    };
    let state = DeviationState::new(matrix, kind.label())?;
    Ok(TargetOperator { kind, state })
}

/// Reads a dense complex matrix stored as CSV of `re,im` pairs in row-major
/// order. Line breaks are free: one matrix row per line and one entry per
/// line both parse. Lines starting with `#` are skipped.
pub fn load_complex_matrix_csv(path: impl AsRef<Path>, dim: usize) -> Result<OperatorMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_complex_matrix_csv(&text, dim)
}

pub fn parse_complex_matrix_csv(text: &str, dim: usize) -> Result<OperatorMatrix> {
    let mut values = Vec::with_capacity(2 * dim * dim);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for field in line.split(',') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                Error::validation(
                    "custom_target",
                    format!("line {}: `{field}` is not a number", lineno + 1),
                )
            })?;
            values.push(v);
        }
    }
    if values.len() != 2 * dim * dim {
        return Err(Error::LengthMismatch {
            what: "custom matrix values (re,im pairs)",
            expected: 2 * dim * dim,
            found: values.len(),
        });
    }
    let entries: Vec<C64> = values.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
    let m = DMatrix::from_row_slice(dim, dim, &entries);
    let op = OperatorMatrix::new(m)?;
    if !op.is_hermitian() {
        return Err(Error::NotHermitian(op.hermiticity_error()));
    }
    Ok(op)
}

/// ρ_thermal = Σ_i I^z_i and ρ_I = Σ_i I^x_i.
pub fn thermal_and_initial_states(
    system: &SpinSystem,
    ops: &SpinOperators,
) -> Result<(DeviationState, DeviationState)> {
    system.check_ops(ops)?;
    let thermal = DeviationState::new(ops.total(Component::Z).clone(), "thermal Iz")?;
    let initial = DeviationState::new(ops.total(Component::X).clone(), "Ix")?;
    Ok((thermal, initial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::build_spin_operators;

    #[test]
    fn system_validation() {
        assert!(SpinSystem::new(vec![0.0, 1.0], vec![vec![0.0, 2.0], vec![3.0, 0.0]]).is_err());
        assert!(SpinSystem::new(vec![0.0, 1.0], vec![vec![1.0, 2.0], vec![2.0, 0.0]]).is_err());
        assert!(SpinSystem::new(vec![0.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(SpinSystem::new(vec![], vec![]).is_err());
        let s = SpinSystem::moderate();
        assert_eq!(s.offsets_hz(), &[-17.9, 17.9]);
        assert!((s.shift_difference_hz().unwrap() - 35.8).abs() < 1e-12);
    }

    #[test]
    fn control_validation() {
        assert!(ControlParams::new(-1.0, 0.0).is_err());
        assert!(ControlParams::new(f64::NAN, 0.0).is_err());
        assert!(ControlParams::new(0.0, -5.0).is_ok());
    }

    #[test]
    fn two_spin_h0_matches_closed_form() {
        let ops = build_spin_operators(2).unwrap();
        let (delta, j) = (35.8, 17.2);
        let h0 = build_h0(&SpinSystem::two_spin(delta, j).unwrap(), &ops).unwrap();
        let iz1 = ops.spin(0, Component::Z).entries();
        let iz2 = ops.spin(1, Component::Z).entries();
        let dot = ops.scalar_product(0, 1).unwrap();
        let want = (iz1 - iz2) * C64::new(-PI * delta, 0.0)
            + dot.entries() * C64::new(2.0 * PI * j, 0.0);
        assert!(crate::spin::max_abs(&(h0.entries() - want)) < 1e-12);
    }

    #[test]
    fn zero_control_leaves_h0() {
        let ops = build_spin_operators(2).unwrap();
        let h0 = build_h0(&SpinSystem::moderate(), &ops).unwrap();
        let hb = build_hb(&h0, &ops, ControlParams::off()).unwrap();
        assert_eq!(hb.entries(), h0.entries());
    }

    #[test]
    fn custom_matrix_parsing() {
        let rows = "0.5,0,0,0\n0,0,-0.5,0\n";
        let op = parse_complex_matrix_csv(rows, 2).unwrap();
        assert!(op.is_hermitian());
        let flat = "0.5,0\n0,0\n0,0\n-0.5,0\n";
        assert_eq!(parse_complex_matrix_csv(flat, 2).unwrap().entries(), op.entries());
        assert!(parse_complex_matrix_csv("0,1,0,0\n0,0,0,0\n", 2).is_err());
        assert!(parse_complex_matrix_csv("1,0\n", 2).is_err());
        assert!(parse_complex_matrix_csv("a,b,c,d\n1,2,3,4\n", 2).is_err());
    }

    #[test]
    fn custom_target_must_be_traceless() {
        let ops = build_spin_operators(1).unwrap();
        let op = parse_complex_matrix_csv("1,0,0,0\n0,0,0,0\n", 2).unwrap();
        let err = build_target(TargetKind::Custom(op), &ops).unwrap_err();
        assert!(matches!(err, Error::NotTraceless(_)));
        assert!(err.is_validation());
    }

    #[test]
    fn target_labels_are_one_based() {
        assert_eq!(TargetKind::SingletOrder(0, 1).label(), "singlet_order(1,2)");
        assert_eq!(
            TargetKind::PairwiseSingletSum(vec![(0, 1), (2, 3)]).label(),
            "pairwise_singlet_sum[(1,2),(3,4)]"
        );
    }
}
