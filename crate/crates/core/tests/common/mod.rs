//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's propagation code: operators are
//! built from Pauli matrices with explicit Kronecker products and matrix
//! exponentials use a scaling-and-squaring Taylor series.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type M = DMatrix<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn half_pauli(axis: char) -> M {
    let m = match axis {
        'x' => [c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)],
        'y' => [c(0.0, 0.0), c(0.0, -0.5), c(0.0, 0.5), c(0.0, 0.0)],
        'z' => [c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)],
        _ => panic!("axis {axis}"),
    };
    M::from_row_slice(2, 2, &m)
}

/// I_axis on spin `i` of `n`; spin 0 is the leftmost factor.
pub fn spin_op(n: usize, i: usize, axis: char) -> M {
    let mut out = M::identity(1, 1);
    for k in 0..n {
        let f = if k == i { half_pauli(axis) } else { M::identity(2, 2) };
        out = out.kronecker(&f);
    }
    out
}

pub fn total(n: usize, axis: char) -> M {
    let d = 1 << n;
    (0..n).fold(M::zeros(d, d), |acc, i| acc + spin_op(n, i, axis))
}

pub fn dot(n: usize, i: usize, j: usize) -> M {
    ['x', 'y', 'z']
        .iter()
        .map(|&a| spin_op(n, i, a) * spin_op(n, j, a))
        .fold(M::zeros(1 << n, 1 << n), |acc, m| acc + m)
}

/// Two-spin free Hamiltonian in rad/s with offsets ∓δ/2.
pub fn h0_pair(delta_hz: f64, j_hz: f64) -> M {
    let w = 2.0 * PI;
    spin_op(2, 0, 'z') * c(-w * delta_hz / 2.0, 0.0)
        + spin_op(2, 1, 'z') * c(w * delta_hz / 2.0, 0.0)
        + dot(2, 0, 1) * c(w * j_hz, 0.0)
}

pub fn expm(a: &M) -> M {
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    let mut s = 0;
    while norm / f64::from(1u32 << s.min(30)) > 0.5 {
        s += 1;
    }
    let scaled = a * c(1.0 / f64::from(1u32 << s), 0.0);
    let n = a.nrows();
    let mut term = M::identity(n, n);
    let mut sum = M::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled * c(1.0 / k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// exp(−i H t).
pub fn evolve(h: &M, t: f64) -> M {
    expm(&(h * c(0.0, -t)))
}

/// exp(−i θ (cos φ Iˣ + sin φ Iʸ)) on all `n` spins.
pub fn pulse(n: usize, theta: f64, phase: f64) -> M {
    let g = total(n, 'x') * c(phase.cos(), 0.0) + total(n, 'y') * c(phase.sin(), 0.0);
    expm(&(g * c(0.0, -theta)))
}

pub fn conj(u: &M, rho: &M) -> M {
    u * rho * u.adjoint()
}

pub fn overlap(a: &M, b: &M) -> f64 {
    let ab = (a.adjoint() * b).trace().re;
    let aa = (a.adjoint() * a).trace().re;
    let bb = (b.adjoint() * b).trace().re;
    ab / (aa * bb).sqrt()
}

pub fn max_diff(a: &M, b: &M) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry of U − e^{iφ}V after removing the best global phase.
pub fn phase_diff(u: &M, v: &M) -> f64 {
    let t = (v.adjoint() * u).trace();
    let ph = if t.norm() > 0.0 { t / t.norm() } else { c(1.0, 0.0) };
    max_diff(u, &(v * ph))
}
