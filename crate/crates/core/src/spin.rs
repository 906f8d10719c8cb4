//! Spin-1/2 operator algebra.
//!
//! Basis convention, used everywhere in the crate: `|0>` is spin-up
//! (m = +1/2), and the tensor order is spin 0 ⊗ spin 1 ⊗ … so spin 0 is the
//! most significant bit of a basis index. Spin operators use the physics
//! normalization I = σ/2. Spin indices in the library API are zero-based.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest spin count accepted by [`build_spin_operators`].
pub const MAX_SPINS: usize = 10;

/// Tolerance used when flagging operators as Hermitian or traceless.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense complex operator on the 2^N-dimensional spin Hilbert space.
#[derive(Clone, PartialEq)]
pub struct OperatorMatrix {
    entries: CMatrix,
    hermitian: bool,
}

impl fmt::Debug for OperatorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorMatrix")
            .field("dim", &self.dim())
            .field("hermitian", &self.hermitian)
            .finish()
    }
}

impl OperatorMatrix {
    /// Wraps a square matrix whose dimension is a power of two. The Hermitian
    /// flag is computed from the entries.
    pub fn new(entries: CMatrix) -> Result<Self> {
        let dim = entries.nrows();
        if entries.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: entries.ncols(),
            });
        }
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::validation(
                "dim",
                format!("{dim} is not a positive power of two"),
            ));
        }
        let hermitian = hermiticity_error(&entries) <= HERMITIAN_TOL * scale(&entries);
        Ok(Self { entries, hermitian })
    }

    /// Like [`OperatorMatrix::new`] but rejects non-Hermitian input.
    pub fn hermitian(entries: CMatrix) -> Result<Self> {
        let op = Self::new(entries)?;
        if !op.hermitian {
            return Err(Error::NotHermitian(op.hermiticity_error()));
        }
        Ok(op)
    }

    /// Internal constructor for results known to be well formed.
    pub(crate) fn from_parts(entries: CMatrix, hermitian: bool) -> Self {
        debug_assert!(entries.nrows().is_power_of_two());
        Self { entries, hermitian }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_parts(CMatrix::identity(dim, dim), true)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_parts(CMatrix::zeros(dim, dim), true)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_spins(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// max |A − A†| over all entries.
    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.entries)
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    /// Tr(A·B) without forming the product.
    pub fn trace_product(&self, other: &OperatorMatrix) -> C64 {
        trace_product(&self.entries, &other.entries)
    }

    /// Tr(A²) for a Hermitian operator (squared Frobenius norm).
    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }

    /// max |A − B| over all entries.
    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// [A, B] = AB − BA.
    pub fn commutator(&self, other: &OperatorMatrix) -> CMatrix {
        &self.entries * &other.entries - &other.entries * &self.entries
    }

    /// Matrix product; the Hermitian flag is recomputed.
    pub fn matmul(&self, other: &OperatorMatrix) -> OperatorMatrix {
        let m = &self.entries * &other.entries;
        let hermitian = hermiticity_error(&m) <= HERMITIAN_TOL * scale(&m);
        Self::from_parts(m, hermitian)
    }

    pub fn scale(&self, factor: f64) -> OperatorMatrix {
        Self::from_parts(&self.entries * C64::new(factor, 0.0), self.hermitian)
    }

    /// U A U† for a unitary U.
    pub fn conjugate_by(&self, unitary: &CMatrix) -> OperatorMatrix {
        let m = unitary * &self.entries * unitary.adjoint();
        Self::from_parts(m, self.hermitian)
    }

    /// Eigenvalues of a Hermitian operator in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.hermitian {
            return Err(Error::NotHermitian(self.hermiticity_error()));
        }
        let eig = SymmetricEigen::try_new(self.entries.clone(), 1e-15, 10_000).ok_or_else(|| {
            Error::Numerical(format!(
                "Hermitian eigendecomposition did not converge (dim {}, max|A| {:.3e})",
                self.dim(),
                self.max_abs()
            ))
        })?;
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(values)
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix::from_parts(&self.entries + &rhs.entries, self.hermitian && rhs.hermitian)
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix::from_parts(&self.entries - &rhs.entries, self.hermitian && rhs.hermitian)
    }
}

impl Neg for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn neg(self) -> OperatorMatrix {
        OperatorMatrix::from_parts(-&self.entries, self.hermitian)
    }
}

impl Mul<f64> for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: f64) -> OperatorMatrix {
        self.scale(rhs)
    }
}

pub(crate) fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn scale(m: &CMatrix) -> f64 {
    max_abs(m).max(1.0)
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Tr(A·B) = Σ_ij A_ij B_ji.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Cartesian component of a spin operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
    Z,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::X, Component::Y, Component::Z];

    fn index(self) -> usize {
        match self {
            Component::X => 0,
            Component::Y => 1,
            Component::Z => 2,
        }
    }
}

fn pauli_half(c: Component) -> CMatrix {
    let z = C64::new(0.0, 0.0);
    let h = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    match c {
        Component::X => CMatrix::from_row_slice(2, 2, &[z, h, h, z]),
        Component::Y => CMatrix::from_row_slice(2, 2, &[z, -ih, ih, z]),
        Component::Z => CMatrix::from_row_slice(2, 2, &[h, z, z, -h]),
    }
}

/// Single-spin operators I^α_i embedded in the full space, plus totals.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    n_spins: usize,
    single: Vec<[OperatorMatrix; 3]>,
    total: [OperatorMatrix; 3],
}

/// Builds I^x_i, I^y_i, I^z_i for every spin and the totals I^α = Σ_i I^α_i.
pub fn build_spin_operators(n_spins: usize) -> Result<SpinOperators> {
    if n_spins == 0 || n_spins > MAX_SPINS {
        return Err(Error::DimensionLimit(n_spins));
    }
    let dim = 1usize << n_spins;
    let eye2 = CMatrix::identity(2, 2);
    let mut single = Vec::with_capacity(n_spins);
    for i in 0..n_spins {
        let ops = Component::ALL.map(|c| {
            let mut m = CMatrix::identity(1, 1);
            for k in 0..n_spins {
                let factor = if k == i { pauli_half(c) } else { eye2.clone() };
                m = m.kronecker(&factor);
            }
            OperatorMatrix::from_parts(m, true)
        });
        single.push(ops);
    }
    let total = Component::ALL.map(|c| {
        let mut acc = CMatrix::zeros(dim, dim);
        for ops in &single {
            acc += ops[c.index()].entries();
        }
        OperatorMatrix::from_parts(acc, true)
    });
    Ok(SpinOperators {
        n_spins,
        single,
        total,
    })
}

impl SpinOperators {
    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    /// I^α_i for spin `i`.
    ///
    /// # Panics
    /// If `i` is out of range.
    pub fn spin(&self, i: usize, c: Component) -> &OperatorMatrix {
        &self.single[i][c.index()]
    }

    /// Total I^α.
    pub fn total(&self, c: Component) -> &OperatorMatrix {
        &self.total[c.index()]
    }

    pub fn identity(&self) -> OperatorMatrix {
        OperatorMatrix::identity(self.dim())
    }

    pub(crate) fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i == j || i >= self.n_spins || j >= self.n_spins {
            return Err(Error::InvalidPair(i, j, self.n_spins));
        }
        Ok(())
    }

    /// I_i · I_j = Σ_α I^α_i I^α_j.
    pub fn scalar_product(&self, i: usize, j: usize) -> Result<OperatorMatrix> {
        self.check_pair(i, j)?;
        let dim = self.dim();
        let mut acc = CMatrix::zeros(dim, dim);
        for c in Component::ALL {
            acc += self.spin(i, c).entries() * self.spin(j, c).entries();
        }
        Ok(OperatorMatrix::from_parts(acc, true))
    }

    /// Projector onto the singlet of pair (i, j): 𝟙/4 − I_i·I_j.
    pub fn singlet_projector(&self, i: usize, j: usize) -> Result<OperatorMatrix> {
        let dot = self.scalar_product(i, j)?;
        Ok(&self.identity().scale(0.25) - &dot)
    }
}

/// Free-function form of [`SpinOperators::scalar_product`].
pub fn scalar_product_operator(ops: &SpinOperators, i: usize, j: usize) -> Result<OperatorMatrix> {
    ops.scalar_product(i, j)
}

/// Traceless, Hermitian deviation density matrix.
#[derive(Clone, Debug)]
pub struct DeviationState {
    matrix: OperatorMatrix,
    label: String,
}

impl DeviationState {
    pub fn new(matrix: OperatorMatrix, label: impl Into<String>) -> Result<Self> {
        let herm = matrix.hermiticity_error();
        if herm > HERMITIAN_TOL * matrix.max_abs().max(1.0) {
            return Err(Error::NotHermitian(herm));
        }
        let tr = matrix.trace().norm();
        if tr > HERMITIAN_TOL * (matrix.dim() as f64).max(1.0) * matrix.max_abs().max(1.0) {
            return Err(Error::NotTraceless(tr));
        }
        Ok(Self {
            matrix,
            label: label.into(),
        })
    }

    /// Skips validation; used on the propagation hot path where unitary
    /// conjugation preserves both invariants.
    pub(crate) fn from_trusted(matrix: OperatorMatrix, label: impl Into<String>) -> Self {
        Self {
            matrix,
            label: label.into(),
        }
    }

    /// Traceless part of the pure-state projector |ψ⟩⟨ψ|. Returns the state and
    /// the identity weight 1/dim that was removed.
    pub fn from_pure_ket(ket: &CVector, label: impl Into<String>) -> Result<(Self, f64)> {
        let dim = ket.len();
        let norm = ket.norm();
        if norm < 1e-12 {
            return Err(Error::ZeroNorm);
        }
        let k = ket / C64::new(norm, 0.0);
        let mut proj = &k * k.adjoint();
        let background = 1.0 / dim as f64;
        for i in 0..dim {
            proj[(i, i)] -= C64::new(background, 0.0);
        }
        let state = Self::new(OperatorMatrix::from_parts(proj, true), label)?;
        Ok((state, background))
    }

    pub fn matrix(&self) -> &OperatorMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> OperatorMatrix {
        self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// The four pair states |S0>, |T0>, |T+>, |T-> on the two-spin space.
#[derive(Clone, Debug)]
pub struct SingletTripletBasis {
    pub pair: (usize, usize),
    pub s0: CVector,
    pub t0: CVector,
    pub t_plus: CVector,
    pub t_minus: CVector,
}

/// Partner state used with |S0> to span a two-level Bloch sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TripletPartner {
    #[serde(rename = "T0")]
    T0,
    #[serde(rename = "T+")]
    TPlus,
    #[serde(rename = "T-")]
    TMinus,
}

impl TripletPartner {
    pub const ALL: [TripletPartner; 3] = [TripletPartner::T0, TripletPartner::TPlus, TripletPartner::TMinus];

    pub fn label(self) -> &'static str {
        match self {
            TripletPartner::T0 => "S0-T0",
            TripletPartner::TPlus => "S0-T+",
            TripletPartner::TMinus => "S0-T-",
        }
    }
}

impl std::str::FromStr for TripletPartner {
    type Err = Error;

    /// Accepts `T0`, `T+`, `T-` with or without the `S0-` prefix.
    fn from_str(s: &str) -> Result<Self> {
        let bare = s.strip_prefix("S0-").or_else(|| s.strip_prefix("s0-")).unwrap_or(s);
        match bare {
            "T0" | "t0" => Ok(TripletPartner::T0),
            "T+" | "t+" | "Tplus" | "tplus" => Ok(TripletPartner::TPlus),
            "T-" | "t-" | "Tminus" | "tminus" => Ok(TripletPartner::TMinus),
            _ => Err(Error::validation(
                "partner",
                format!("`{s}` is not one of T0, T+, T- (optionally prefixed S0-)"),
            )),
        }
    }
}

/// Product ket from one character per spin, spin 0 first: `0` or `u` for
/// |α⟩, `1` or `d` for |β⟩, `+` and `-` for (|α⟩ ± |β⟩)/√2.
pub fn product_ket(spec: &str) -> Result<CVector> {
    let n = spec.chars().count();
    if n == 0 || n > MAX_SPINS {
        return Err(Error::DimensionLimit(n));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut ket = CVector::from_element(1, C64::new(1.0, 0.0));
    for ch in spec.chars() {
        let (a, b) = match ch {
            '0' | 'u' => (1.0, 0.0),
            '1' | 'd' => (0.0, 1.0),
            '+' => (h, h),
            '-' => (h, -h),
            other => {
                return Err(Error::validation(
                    "ket",
                    format!("`{other}` is not one of 0, 1, u, d, +, -"),
                ))
            }
        };
        let single = CVector::from_vec(vec![C64::new(a, 0.0), C64::new(b, 0.0)]);
        ket = ket.kronecker(&single);
    }
    Ok(ket)
}

impl SingletTripletBasis {
    pub fn partner(&self, p: TripletPartner) -> &CVector {
        match p {
            TripletPartner::T0 => &self.t0,
            TripletPartner::TPlus => &self.t_plus,
            TripletPartner::TMinus => &self.t_minus,
        }
    }

    pub fn kets(&self) -> [&CVector; 4] {
        [&self.s0, &self.t0, &self.t_plus, &self.t_minus]
    }
}

/// Singlet–triplet kets of `pair` written on that pair's 4-dimensional
/// space. Larger systems reach this space through
/// [`reduce_to_pair`].
pub fn singlet_triplet_basis(pair: (usize, usize), n_spins: usize) -> Result<SingletTripletBasis> {
    let (i, j) = pair;
    if n_spins < 2 || n_spins > MAX_SPINS || i == j || i >= n_spins || j >= n_spins {
        return Err(Error::InvalidPair(i, j, n_spins));
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let e = |k: usize| {
        let mut v = CVector::zeros(4);
        v[k] = C64::new(1.0, 0.0);
        v
    };
    // |01> is index 1, |10> is index 2.
    let s0 = (e(1) - e(2)) * C64::new(r, 0.0);
    let t0 = (e(1) + e(2)) * C64::new(r, 0.0);
    Ok(SingletTripletBasis {
        pair,
        s0,
        t0,
        t_plus: e(0),
        t_minus: e(3),
    })
}

/// Partial trace of `op` over every spin except `pair`, giving the reduced
/// 4×4 operator in the pair's own (first ⊗ second) ordering.
pub fn reduce_to_pair(op: &OperatorMatrix, pair: (usize, usize)) -> Result<CMatrix> {
    let n = op.n_spins();
    let (a, b) = pair;
    if a == b || a >= n || b >= n {
        return Err(Error::InvalidPair(a, b, n));
    }
    if n == 2 && pair == (0, 1) {
        return Ok(op.entries().clone());
    }
    let bit = |idx: usize, spin: usize| (idx >> (n - 1 - spin)) & 1;
    let dim = op.dim();
    let m = op.entries();
    let mut out = CMatrix::zeros(4, 4);
    for r in 0..dim {
        for c in 0..dim {
            // Other spins must agree between row and column.
            let mut same = true;
            for s in 0..n {
                if s != a && s != b && bit(r, s) != bit(c, s) {
                    same = false;
                    break;
                }
            }
            if !same {
                continue;
            }
            let rr = 2 * bit(r, a) + bit(r, b);
            let cc = 2 * bit(c, a) + bit(c, b);
            out[(rr, cc)] += m[(r, c)];
        }
    }
    Ok(out)
}
