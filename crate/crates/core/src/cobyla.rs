//! Derivative-free minimization by linear approximation inside a trust region.
//!
//! The method keeps a simplex of n + 1 evaluated points, fits the linear
//! model that interpolates them, and steps to the model minimizer inside a
//! ball of radius ρ intersected with the bound box. ρ shrinks from `rhobeg`
//! to `rhoend` whenever the model stops predicting progress and the simplex
//! geometry is acceptable. Only simple bounds are supported, which is all the
//! pulse-duration problems need.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CobylaSettings {
    pub rhobeg: f64,
    pub rhoend: f64,
    pub max_evals: usize,
}

impl Default for CobylaSettings {
    fn default() -> Self {
        Self {
            rhobeg: 5e-3,
            rhoend: 1e-6,
            max_evals: 2000,
        }
    }
}

impl CobylaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rhobeg.is_finite() && self.rhobeg > 0.0) {
            return Err(Error::validation("rhobeg", format!("{} (must be > 0)", self.rhobeg)));
        }
        if !(self.rhoend.is_finite() && self.rhoend > 0.0 && self.rhoend <= self.rhobeg) {
            return Err(Error::validation(
                "rhoend",
                format!("{} (must satisfy 0 < rhoend <= rhobeg)", self.rhoend),
            ));
        }
        if self.max_evals < 2 {
            return Err(Error::validation("max_evals", "must be at least 2"));
        }
        Ok(())
    }
}

/// Outcome of one local minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    /// False when the evaluation budget ran out before ρ reached `rhoend`.
    pub converged: bool,
}

/// Any bound-constrained, derivative-free local minimizer. Implementations
/// must be deterministic: the same inputs give the same evaluation sequence.
pub trait LocalOptimizer: Send + Sync {
    fn minimize(
        &self,
        f: &mut dyn FnMut(&[f64]) -> Result<f64>,
        x0: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Result<Minimum>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Cobyla {
    pub settings: CobylaSettings,
}

impl Cobyla {
    pub fn new(settings: CobylaSettings) -> Self {
        Self { settings }
    }
}

impl LocalOptimizer for Cobyla {
    fn minimize(
        &self,
        f: &mut dyn FnMut(&[f64]) -> Result<f64>,
        x0: &[f64],
        lower: &[f64],
        upper: &[f64],
    ) -> Result<Minimum> {
        minimize(f, x0, lower, upper, &self.settings)
    }
}

fn check_bounds(x0: &[f64], lower: &[f64], upper: &[f64]) -> Result<()> {
    let n = x0.len();
    for (what, v) in [("lower", lower), ("upper", upper)] {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                found: v.len(),
            });
        }
    }
    for i in 0..n {
        if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] <= upper[i]) {
            return Err(Error::validation(
                "bounds",
                format!("component {i}: [{}, {}]", lower[i], upper[i]),
            ));
        }
        if !x0[i].is_finite() {
            return Err(Error::validation("x0", format!("component {i} is not finite")));
        }
    }
    Ok(())
}

/// Minimizes `f` over the box [lower, upper] starting from `x0` (clipped
/// into the box). Components with lower == upper are held fixed.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &CobylaSettings,
) -> Result<Minimum> {
    settings.validate()?;
    check_bounds(x0, lower, upper)?;
    let start: Vec<f64> = x0
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&x, (&l, &u))| x.clamp(l, u))
        .collect();
    let free: Vec<usize> = (0..start.len()).filter(|&i| upper[i] > lower[i]).collect();

    let mut n_evals = 0usize;
    let mut full = start.clone();
    let mut eval = |y: &[f64], n_evals: &mut usize| -> Result<f64> {
        for (k, &i) in free.iter().enumerate() {
            full[i] = y[k];
        }
        *n_evals += 1;
        let v = f(&full)?;
        if v.is_nan() {
            return Err(Error::Numerical(format!("objective returned NaN at {full:?}")));
        }
        Ok(v)
    };

    if free.is_empty() {
        let v = eval(&[], &mut n_evals)?;
        return Ok(Minimum {
            x: start,
            f: v,
            n_evals,
            converged: true,
        });
    }

    let lo: Vec<f64> = free.iter().map(|&i| lower[i]).collect();
    let hi: Vec<f64> = free.iter().map(|&i| upper[i]).collect();
    let y0: Vec<f64> = free.iter().map(|&i| start[i]).collect();
    let mut run = Simplex::new(lo, hi, settings.rhobeg);
    let outcome = run.optimize(&y0, settings, &mut |y| eval(y, &mut n_evals))?;

    let mut x = start;
    for (k, &i) in free.iter().enumerate() {
        x[i] = run.points[run.best][k];
    }
    Ok(Minimum {
        x,
        f: run.values[run.best],
        n_evals,
        converged: outcome,
    })
}

struct Simplex {
    lo: Vec<f64>,
    hi: Vec<f64>,
    rho: f64,
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    best: usize,
}

/// Relative trust-region ratio below which a step counts as poor.
const POOR_RATIO: f64 = 0.1;
/// Geometry tolerances, as multiples of ρ.
const MIN_SIGMA: f64 = 0.25;
const MAX_EDGE: f64 = 2.1;

impl Simplex {
    fn new(lo: Vec<f64>, hi: Vec<f64>, rho: f64) -> Self {
        Self {
            lo,
            hi,
            rho,
            points: Vec::new(),
            values: Vec::new(),
            best: 0,
        }
    }

    fn n(&self) -> usize {
        self.lo.len()
    }

    fn clip(&self, mut y: Vec<f64>) -> Vec<f64> {
        for (i, v) in y.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
        y
    }

    /// Axis-aligned simplex of edge ρ around `base`, stepping towards
    /// whichever side of each bound has more room.
    fn build_around(
        &mut self,
        base: Vec<f64>,
        f_base: f64,
        eval: &mut dyn FnMut(&[f64]) -> Result<f64>,
        budget: &mut usize,
    ) -> Result<bool> {
        let n = self.n();
        self.points = vec![base.clone()];
        self.values = vec![f_base];
        self.best = 0;
        for i in 0..n {
            if *budget == 0 {
                self.update_best();
                return Ok(false);
            }
            let up = self.hi[i] - base[i];
            let down = base[i] - self.lo[i];
            let step = if up >= self.rho || up >= down {
                up.min(self.rho)
            } else {
                -down.min(self.rho)
            };
            let mut y = base.clone();
            y[i] += step;
            let v = eval(&y)?;
            *budget -= 1;
            self.points.push(y);
            self.values.push(v);
        }
        self.update_best();
        Ok(true)
    }

    fn update_best(&mut self) {
        let mut best = 0;
        for k in 1..self.values.len() {
            if self.values[k] < self.values[best] {
                best = k;
            }
        }
        self.best = best;
    }

    /// Edge matrix (rows: other vertices minus best), the matching value
    /// differences and the vertex index of each row.
    fn edges(&self) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
        let n = self.n();
        let base = &self.points[self.best];
        let idx: Vec<usize> = (0..=n).filter(|&k| k != self.best).collect();
        let mut d = DMatrix::zeros(n, n);
        let mut df = DVector::zeros(n);
        for (r, &k) in idx.iter().enumerate() {
            for c in 0..n {
                d[(r, c)] = self.points[k][c] - base[c];
            }
            df[r] = self.values[k] - self.values[self.best];
        }
        (d, df, idx)
    }

    fn optimize(
        &mut self,
        y0: &[f64],
        settings: &CobylaSettings,
        eval: &mut dyn FnMut(&[f64]) -> Result<f64>,
    ) -> Result<bool> {
        let mut budget = settings.max_evals;
        let base = self.clip(y0.to_vec());
        let f0 = eval(&base)?;
        budget -= 1;
        if !self.build_around(base, f0, eval, &mut budget)? {
            return Ok(false);
        }

        loop {
            if budget == 0 {
                return Ok(false);
            }
            let (d, df, idx) = self.edges();
            let Some(dinv) = d.clone().try_inverse() else {
                // Collapsed simplex: rebuild it around the best point.
                let base = self.points[self.best].clone();
                let fb = self.values[self.best];
                if !self.build_around(base, fb, eval, &mut budget)? {
                    return Ok(false);
                }
                continue;
            };
            let g = &dinv * &df;
            let base = self.points[self.best].clone();
            let step = self.trust_region_step(&base, &g);
            let step_len = step.norm();
            let geometry_ok = self.geometry_ok(&d, &dinv);

            if step_len < 0.5 * self.rho {
                if !geometry_ok {
                    self.geometry_step(&d, &dinv, &g, &idx, eval, &mut budget)?;
                    continue;
                }
                if !self.shrink(settings) {
                    return Ok(true);
                }
                continue;
            }

            let trial: Vec<f64> = self.clip(base.iter().zip(step.iter()).map(|(b, s)| b + s).collect());
            let f_trial = eval(&trial)?;
            budget -= 1;
            let predicted = -g.dot(&step);
            let actual = self.values[self.best] - f_trial;
            let ratio = if predicted > 0.0 { actual / predicted } else { -1.0 };
            self.insert_point(trial, f_trial, &step, &dinv, &idx);

            if ratio < POOR_RATIO {
                if !geometry_ok {
                    if budget == 0 {
                        return Ok(false);
                    }
                    let (d, df, idx) = self.edges();
                    if let Some(dinv) = d.clone().try_inverse() {
                        let g = &dinv * &df;
                        if !self.geometry_ok(&d, &dinv) {
                            self.geometry_step(&d, &dinv, &g, &idx, eval, &mut budget)?;
                            continue;
                        }
                    } else {
                        continue;
                    }
                }
                if !self.shrink(settings) {
                    return Ok(true);
                }
            }
        }
    }

    /// Halves ρ; returns false once ρ already equals `rhoend`.
    fn shrink(&mut self, settings: &CobylaSettings) -> bool {
        if self.rho <= settings.rhoend {
            return false;
        }
        self.rho *= 0.5;
        if self.rho <= 1.5 * settings.rhoend {
            self.rho = settings.rhoend;
        }
        true
    }

    /// argmin g·s subject to ‖s‖ ≤ ρ and lo ≤ base + s ≤ hi. The solution is
    /// the box projection of −t·g for the t at which the ball becomes active.
    fn trust_region_step(&self, base: &[f64], g: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let project = |t: f64| {
            DVector::from_iterator(
                n,
                (0..n).map(|i| (-t * g[i]).clamp(self.lo[i] - base[i], self.hi[i] - base[i])),
            )
        };
        let gnorm = g.norm();
        if gnorm == 0.0 || !gnorm.is_finite() {
            return DVector::zeros(n);
        }
        let far = project(f64::MAX.sqrt());
        if far.norm() <= self.rho {
            return far;
        }
        let (mut a, mut b) = (0.0, self.rho / gnorm);
        while project(b).norm() < self.rho {
            a = b;
            b *= 2.0;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if project(m).norm() < self.rho {
                a = m;
            } else {
                b = m;
            }
        }
        project(a)
    }

    /// Every vertex at least MIN_SIGMA·ρ from its opposite face and no edge
    /// longer than MAX_EDGE·ρ.
    fn geometry_ok(&self, d: &DMatrix<f64>, dinv: &DMatrix<f64>) -> bool {
        let n = self.n();
        (0..n).all(|k| {
            let sigma = 1.0 / dinv.column(k).norm();
            let edge = d.row(k).norm();
            sigma >= MIN_SIGMA * self.rho && edge <= MAX_EDGE * self.rho
        })
    }

    /// Replaces the worst-placed vertex by a point 0.5ρ from the best vertex
    /// along the normal of the face opposite it.
    fn geometry_step(
        &mut self,
        d: &DMatrix<f64>,
        dinv: &DMatrix<f64>,
        g: &DVector<f64>,
        idx: &[usize],
        eval: &mut dyn FnMut(&[f64]) -> Result<f64>,
        budget: &mut usize,
    ) -> Result<()> {
        let n = self.n();
        let edges: Vec<f64> = (0..n).map(|k| d.row(k).norm()).collect();
        let sigmas: Vec<f64> = (0..n).map(|k| 1.0 / dinv.column(k).norm()).collect();
        let longest = (0..n).max_by(|&a, &b| edges[a].total_cmp(&edges[b])).unwrap_or(0);
        let row = if edges[longest] > MAX_EDGE * self.rho {
            longest
        } else {
            (0..n).min_by(|&a, &b| sigmas[a].total_cmp(&sigmas[b])).unwrap_or(0)
        };
        let normal = dinv.column(row).normalize();
        let sign = if g.dot(&normal) > 0.0 { -1.0 } else { 1.0 };
        let base = self.points[self.best].clone();
        let candidate = |s: f64| -> Vec<f64> {
            self.clip(
                base.iter()
                    .zip(normal.iter())
                    .map(|(b, v)| b + s * 0.5 * self.rho * v)
                    .collect(),
            )
        };
        // Clipping can flatten the step against a bound; take whichever
        // direction keeps more of the normal component.
        let reach = |y: &[f64]| -> f64 {
            y.iter()
                .zip(&base)
                .zip(normal.iter())
                .map(|((a, b), v)| (a - b) * v)
                .sum::<f64>()
                .abs()
        };
        let first = candidate(sign);
        let second = candidate(-sign);
        let y = if reach(&first) >= 0.5 * reach(&second) {
            first
        } else {
            second
        };
        if reach(&y) <= 1e-3 * self.rho {
            // No room at all along this normal: restart the simplex.
            let fb = self.values[self.best];
            self.build_around(base, fb, eval, budget)?;
            return Ok(());
        }
        let v = eval(&y)?;
        *budget -= 1;
        let k = idx[row];
        self.points[k] = y;
        self.values[k] = v;
        self.update_best();
        Ok(())
    }

    /// Puts a freshly evaluated point into the simplex, dropping the vertex
    /// whose removal best preserves volume, weighted towards distant ones.
    fn insert_point(
        &mut self,
        y: Vec<f64>,
        fy: f64,
        step: &DVector<f64>,
        dinv: &DMatrix<f64>,
        idx: &[usize],
    ) {
        let n = self.n();
        // Barycentric weights of the step in terms of the edge vectors.
        let lambda = dinv.transpose() * step;
        let lambda_best = 1.0 - lambda.sum();
        let improved = fy < self.values[self.best];
        let base = &self.points[self.best];
        let dist_factor = |p: &[f64]| -> f64 {
            let dist: f64 = p
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (dist / self.rho).max(1.0)
        };
        let mut choice: Option<(usize, f64)> = None;
        for r in 0..n {
            let k = idx[r];
            let score = lambda[r].abs() * dist_factor(&self.points[k]);
            if choice.map_or(true, |(_, s)| score > s) {
                choice = Some((k, score));
            }
        }
        if improved {
            let score = lambda_best.abs() * dist_factor(base);
            if choice.map_or(true, |(_, s)| score > s) {
                choice = Some((self.best, score));
            }
        }
        let Some((k, score)) = choice else { return };
        if score <= 1e-12 {
            return;
        }
        if !improved && fy >= self.values[k] && score <= 1.0 {
            return;
        }
        self.points[k] = y;
        self.values[k] = fy;
        self.update_best();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(
        f: impl Fn(&[f64]) -> f64,
        x0: &[f64],
        lo: &[f64],
        hi: &[f64],
        s: CobylaSettings,
    ) -> Minimum {
        let mut g = |x: &[f64]| Ok(f(x));
        minimize(&mut g, x0, lo, hi, &s).unwrap()
    }

    fn settings(rhobeg: f64, rhoend: f64, max_evals: usize) -> CobylaSettings {
        CobylaSettings {
            rhobeg,
            rhoend,
            max_evals,
        }
    }

    #[test]
    fn quadratic_bowl() {
        let m = run(
            |x| (x[0] - 0.3).powi(2) + 3.0 * (x[1] + 0.2).powi(2) + (x[2] - 1.0).powi(2),
            &[0.0, 0.0, 0.0],
            &[-5.0; 3],
            &[5.0; 3],
            settings(0.5, 1e-8, 5000),
        );
        assert!(m.converged);
        assert!((m.x[0] - 0.3).abs() < 1e-5 && (m.x[1] + 0.2).abs() < 1e-5, "{m:?}");
        assert!(m.f < 1e-9);
    }

    #[test]
    fn curved_valley() {
        let m = run(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-0.5, 0.5],
            &[-3.0; 2],
            &[3.0; 2],
            settings(0.5, 1e-8, 5000),
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 2e-4, "{m:?}");
    }

    #[test]
    fn active_bound() {
        let m = run(
            |x| x[0] * x[0] + (x[1] - 2.0).powi(2),
            &[3.0, 0.0],
            &[1.0, -1.0],
            &[4.0, 1.5],
            settings(0.5, 1e-9, 3000),
        );
        assert!((m.x[0] - 1.0).abs() < 1e-7 && (m.x[1] - 1.5).abs() < 1e-7, "{m:?}");
    }

    #[test]
    fn linear_objective_goes_to_corner() {
        let m = run(
            |x| x[0] - 2.0 * x[1],
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
            settings(0.2, 1e-6, 500),
        );
        assert!(m.x[0].abs() < 1e-9 && (m.x[1] - 1.0).abs() < 1e-9, "{m:?}");
    }

    #[test]
    fn fixed_components_stay_put() {
        let m = run(
            |x| (x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2),
            &[0.0, 0.25],
            &[-2.0, 0.25],
            &[2.0, 0.25],
            settings(0.5, 1e-8, 1000),
        );
        assert_eq!(m.x[1], 0.25);
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let m = run(
            |x| (x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2),
            &[0.0, 0.0],
            &[-2.0; 2],
            &[2.0; 2],
            settings(0.5, 1e-10, 6),
        );
        assert!(!m.converged);
        assert_eq!(m.n_evals, 6);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| (x[0] * 3.0).sin() + (x[1] - 0.4).powi(2) + 0.1 * x[0] * x[1];
        let s = settings(0.3, 1e-7, 800);
        let a = run(f, &[0.1, 0.9], &[-1.0; 2], &[1.0; 2], s);
        let b = run(f, &[0.1, 0.9], &[-1.0; 2], &[1.0; 2], s);
        assert_eq!(a, b);
    }

    #[test]
    fn bad_settings_rejected() {
        let mut f = |_: &[f64]| Ok(0.0);
        assert!(minimize(&mut f, &[0.0], &[0.0], &[1.0], &settings(-1.0, 1e-3, 10)).is_err());
        assert!(minimize(&mut f, &[0.0], &[0.0], &[1.0], &settings(1e-3, 1e-2, 10)).is_err());
        assert!(minimize(&mut f, &[0.0], &[1.0], &[0.0], &settings(1e-1, 1e-2, 10)).is_err());
    }
}
