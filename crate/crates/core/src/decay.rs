//! Exponential decay fits for singlet-order lifetimes.
//!
//! The model is A·exp(−t/T), optionally plus a constant offset c. Fits start
//! from a log-linear regression and are refined by damped Gauss–Newton
//! (Levenberg–Marquardt) on the rate k = 1/T, which keeps the problem well
//! conditioned for long lifetimes.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::fmt_float;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    /// Storage times in seconds, strictly increasing.
    pub times: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub label: String,
}

impl DecaySeries {
    pub fn new(times: Vec<f64>, amplitudes: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let s = Self {
            times,
            amplitudes,
            label: label.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.amplitudes.len() {
            return Err(Error::LengthMismatch {
                what: "amplitudes",
                expected: self.times.len(),
                found: self.amplitudes.len(),
            });
        }
        if self.times.len() < 3 {
            return Err(Error::validation(
                "times",
                format!("{} points (a decay fit needs at least 3)", self.times.len()),
            ));
        }
        if self.times.iter().chain(&self.amplitudes).any(|v| !v.is_finite()) {
            return Err(Error::validation("amplitudes", "all values must be finite"));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("times", "must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Reads a CSV with header `time_s,amplitude`.
    pub fn read_csv<R: Read>(reader: R, label: impl Into<String>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::validation("decay csv", format!("missing column `{name}`"))
            })
        };
        let (ti, ai) = (col("time_s")?, col("amplitude")?);
        let (mut times, mut amps) = (Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize, name: &str| -> Result<f64> {
                rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| {
                    Error::validation(
                        "decay csv",
                        format!("row {}: `{name}` is not a number", line + 2),
                    )
                })
            };
            times.push(parse(ti, "time_s")?);
            amps.push(parse(ai, "amplitude")?);
        }
        Self::new(times, amps, label)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_csv(file, label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fit a constant baseline c as a third parameter.
    pub offset: bool,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            offset: false,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub t_lls: f64,
    pub t_lls_stderr: f64,
    pub amplitude0: f64,
    pub amplitude0_stderr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl DecayFit {
    pub fn model(&self, t: f64) -> f64 {
        self.amplitude0 * (-t / self.t_lls).exp() + self.offset.unwrap_or(0.0)
    }

    /// Rows time_s, amplitude, fitted.
    pub fn write_csv<W: Write>(&self, series: &DecaySeries, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "amplitude", "fitted"])?;
        for (&t, &a) in series.times.iter().zip(&series.amplitudes) {
            w.write_record([fmt_float(t), fmt_float(a), fmt_float(self.model(t))])?;
        }
        w.flush().map_err(|e| Error::io("<decay csv>", e))?;
        Ok(())
    }
}

pub fn fit_exponential_decay(series: &DecaySeries) -> Result<DecayFit> {
    fit_exponential_decay_with(series, &FitOptions::default())
}

/// Least-squares fit of A·exp(−t/T) (+ c) with standard errors from the
/// linearized covariance σ²(JᵀJ)⁻¹, σ² = SSR/(n − p).
pub fn fit_exponential_decay_with(series: &DecaySeries, opts: &FitOptions) -> Result<DecayFit> {
    series.validate()?;
    let t = &series.times;
    let y = &series.amplitudes;
    let n = t.len();
    let n_par = if opts.offset { 3 } else { 2 };
    if n < n_par + 1 && opts.offset {
        return Err(Error::validation("times", "an offset fit needs at least 4 points"));
    }
    let y_max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if y_max == 0.0 || y.iter().all(|&v| v == y[0]) {
        return Err(Error::FitFailure(format!(
            "series `{}` is constant; there is no decay to fit",
            series.label
        )));
    }

    // Fit in units where the largest |amplitude| is 1 and the time span is 1,
    // then scale back; this makes the result invariant to amplitude scaling.
    let t0 = t[0];
    let span = t[n - 1] - t0;
    let ts: Vec<f64> = t.iter().map(|v| (v - t0) / span).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / y_max).collect();

    let (a_init, k_init, c_init) = initial_guess(&ts, &ys, opts.offset, &series.label)?;
    let mut p = vec![a_init, k_init];
    if opts.offset {
        p.push(c_init);
    }

    let residuals = |p: &[f64]| -> Vec<f64> {
        ts.iter()
            .zip(&ys)
            .map(|(&ti, &yi)| yi - p[0] * (-p[1] * ti).exp() - p.get(2).copied().unwrap_or(0.0))
            .collect()
    };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        DMatrix::from_fn(n, n_par, |i, j| {
            let e = (-p[1] * ts[i]).exp();
            match j {
                0 => e,
                1 => -p[0] * ts[i] * e,
                _ => 1.0,
            }
        })
    };
    let ssr = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    let mut r = residuals(&p);
    let mut s = ssr(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let j = jacobian(&p);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * DVector::from_column_slice(&r);
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..n_par {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(v, d)| v + d).collect();
            let rt = residuals(&trial);
            let st = ssr(&rt);
            let rel = step
                .iter()
                .zip(&trial)
                .map(|(d, v)| d.abs() / v.abs().max(1e-12))
                .fold(0.0, f64::max);
            if st <= s {
                // Stop on the step size only: an SSR-based test would leave
                // the parameters off by about the square root of its tolerance.
                small_step = rel < 1e-14;
                p = trial;
                r = rt;
                s = st;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
            if rel < 1e-15 {
                small_step = true;
                break;
            }
        }
        if !improved || small_step {
            break;
        }
    }

    // Near the minimum the SSR is flat to rounding, so finish with plain
    // Gauss-Newton steps judged by their size, which resolves the parameters
    // to working precision instead of about √ε.
    let mut last = 1e-6;
    for _ in 0..50 {
        let j = jacobian(&p);
        let g = j.transpose() * DVector::from_column_slice(&r);
        let Some(step) = (j.transpose() * &j).cholesky().map(|c| c.solve(&g)) else {
            break;
        };
        let rel = step
            .iter()
            .zip(&p)
            .map(|(d, v)| d.abs() / v.abs().max(1e-12))
            .fold(0.0, f64::max);
        if !(rel < last) {
            break;
        }
        p.iter_mut().zip(step.iter()).for_each(|(v, d)| *v += d);
        r = residuals(&p);
        s = ssr(&r);
        iterations += 1;
        if rel < 1e-16 {
            break;
        }
        last = rel;
    }

    if !(p[1].is_finite() && p[1] > 0.0) {
        return Err(Error::FitFailure(format!(
            "series `{}` does not decay (fitted rate {:.3e} per unit span)",
            series.label, p[1]
        )));
    }

    let j = jacobian(&p);
    let jtj = j.transpose() * &j;
    let cov = jtj.try_inverse().ok_or_else(|| {
        Error::FitFailure(format!("singular normal matrix for series `{}`", series.label))
    })?;
    let dof = (n - n_par) as f64;
    let sigma2 = if dof > 0.0 { s / dof } else { 0.0 };
    let se = |i: usize| (sigma2 * cov[(i, i)]).max(0.0).sqrt();

    // Back to physical units: k = k_s / span, A = A_s·y_max·exp(k_s·t0/span).
    let k = p[1] / span;
    let shift = (p[1] * t0 / span).exp();
    let t_lls = 1.0 / k;
    Ok(DecayFit {
        t_lls,
        t_lls_stderr: se(1) / span / (k * k),
        amplitude0: p[0] * y_max * shift,
        amplitude0_stderr: se(0) * y_max * shift,
        offset: opts.offset.then(|| p[2] * y_max),
        residual_rms: (s / n as f64).sqrt() * y_max,
        iterations,
    })
}

/// Log-linear regression of ln|y − c| on t over points on the dominant side.
fn initial_guess(t: &[f64], y: &[f64], offset: bool, label: &str) -> Result<(f64, f64, f64)> {
    let n = t.len();
    let c = if offset {
        // The tail is a rough baseline; shift it slightly past the last point
        // so the logarithm stays defined.
        let last = y[n - 1];
        let first = y[0];
        last - 0.05 * (first - last)
    } else {
        0.0
    };
    let sign = if y[0] - c >= 0.0 { 1.0 } else { -1.0 };
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| sign * (v - c) > 0.0)
        .map(|(&ti, &v)| (ti, (sign * (v - c)).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::FitFailure(format!(
            "series `{label}` has fewer than two points with a usable sign"
        )));
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    if slope >= 0.0 {
        return Err(Error::FitFailure(format!(
            "series `{label}` does not decay (log-linear slope {slope:.3e})"
        )));
    }
    let a = sign * (ml - slope * mt).exp();
    Ok((a, -slope, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_and_unsorted_series() {
        assert!(DecaySeries::new(vec![0.0, 1.0], vec![1.0, 0.5], "x").is_err());
        assert!(DecaySeries::new(vec![0.0, 2.0, 1.0], vec![1.0, 0.5, 0.2], "x").is_err());
        assert!(DecaySeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5], "x").is_err());
    }

    #[test]
    fn growing_and_flat_data_fail() {
        let up = DecaySeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 4.0], "up").unwrap();
        assert!(matches!(fit_exponential_decay(&up), Err(Error::FitFailure(_))));
        let flat = DecaySeries::new(vec![0.0, 1.0, 2.0], vec![3.0; 3], "flat").unwrap();
        assert!(matches!(fit_exponential_decay(&flat), Err(Error::FitFailure(_))));
    }

    #[test]
    fn negative_amplitudes_fit() {
        let t: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let y: Vec<f64> = t.iter().map(|v| -2.0 * (-v / 3.0).exp()).collect();
        let f = fit_exponential_decay(&DecaySeries::new(t, y, "neg").unwrap()).unwrap();
        assert!((f.t_lls - 3.0).abs() < 1e-9);
        assert!((f.amplitude0 + 2.0).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let text = "time_s,amplitude\n0,1\n1,0.5\n2,0.25\n";
        let s = DecaySeries::read_csv(text.as_bytes(), "x").unwrap();
        assert_eq!(s.amplitudes, vec![1.0, 0.5, 0.25]);
        let bad = "time,amplitude\n0,1\n";
        let e = DecaySeries::read_csv(bad.as_bytes(), "x").unwrap_err();
        assert!(e.to_string().contains("time_s"));
    }
}
