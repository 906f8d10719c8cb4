//! Fidelity, scalarized cost and the unitary-transfer bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{DeviationState, OperatorMatrix};

/// Operators with Frobenius norm below this are treated as zero.
pub const ZERO_NORM_TOL: f64 = 1e-12;

/// Normalized trace overlap Tr(ρ_F ρ_T) / √(Tr ρ_F² · Tr ρ_T²).
pub fn fidelity(rho_f: &DeviationState, rho_t: &DeviationState) -> Result<f64> {
    operator_fidelity(rho_f.matrix(), rho_t.matrix())
}

pub fn operator_fidelity(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    let na = a.norm_sq();
    let nb = b.norm_sq();
    if na.sqrt() < ZERO_NORM_TOL || nb.sqrt() < ZERO_NORM_TOL {
        return Err(Error::ZeroNorm);
    }
    let overlap = a.trace_product(b).re;
    Ok((overlap / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Largest fidelity any unitary can reach from `rho_i` to `rho_t`: the inner
/// product of the two spectra sorted in the same order, normalized like
/// [`fidelity`].
pub fn unitary_bound(rho_i: &OperatorMatrix, rho_t: &OperatorMatrix) -> Result<f64> {
    if rho_i.dim() != rho_t.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho_t.dim(),
            found: rho_i.dim(),
        });
    }
    let a = rho_i.eigenvalues()?;
    let b = rho_t.eigenvalues()?;
    let na: f64 = a.iter().map(|v| v * v).sum();
    let nb: f64 = b.iter().map(|v| v * v).sum();
    if na.sqrt() < ZERO_NORM_TOL || nb.sqrt() < ZERO_NORM_TOL {
        return Err(Error::ZeroNorm);
    }
    // Both ascending; pairing ascending with ascending equals pairing the
    // descending orders.
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb).sqrt()).min(1.0))
}

/// Weight between infidelity and duration, and the seconds→cost conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub r: f64,
    /// Cost units per second of total duration.
    pub time_unit_scale: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            r: 0.4,
            time_unit_scale: 1.0,
        }
    }
}

impl CostConfig {
    pub fn new(r: f64, time_unit_scale: f64) -> Result<Self> {
        let cfg = Self { r, time_unit_scale };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::validation("r", format!("{} (must lie in [0, 1])", self.r)));
        }
        if !(self.time_unit_scale.is_finite() && self.time_unit_scale > 0.0) {
            return Err(Error::validation(
                "time_unit_scale",
                format!("{} (must be > 0)", self.time_unit_scale),
            ));
        }
        Ok(())
    }
}

/// r·(1 − F) + (1 − r)·scale·Σ durations, durations in seconds.
pub fn scalarized_cost(fidelity: f64, durations: &[f64], cfg: &CostConfig) -> Result<f64> {
    let mut total = 0.0;
    for &d in durations {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::NegativeDuration(d));
        }
        total += d;
    }
    Ok(cfg.r * (1.0 - fidelity) + (1.0 - cfg.r) * cfg.time_unit_scale * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{build_spin_operators, Component};

    #[test]
    fn bound_for_magnetization_to_singlet_order() {
        let ops = build_spin_operators(2).unwrap();
        let target = -&ops.scalar_product(0, 1).unwrap();
        let b = unitary_bound(ops.total(Component::Z), &target).unwrap();
        assert!((b - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let self_b = unitary_bound(&target, &target).unwrap();
        assert!((self_b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_an_error() {
        let ops = build_spin_operators(1).unwrap();
        let z = OperatorMatrix::zeros(2);
        assert!(matches!(
            operator_fidelity(&z, ops.total(Component::Z)),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn cost_endpoints() {
        let c1 = CostConfig::new(1.0, 1.0).unwrap();
        assert_eq!(scalarized_cost(0.7, &[0.01, 0.02], &c1).unwrap(), 1.0 - 0.7);
        let c0 = CostConfig::new(0.0, 1.0).unwrap();
        assert_eq!(scalarized_cost(0.3, &[0.0, 0.0], &c0).unwrap(), 0.0);
        assert!(scalarized_cost(0.3, &[-1e-3], &c0).is_err());
        assert!(CostConfig::new(1.5, 1.0).is_err());
        assert!(CostConfig::new(0.5, 0.0).is_err());
    }
}
