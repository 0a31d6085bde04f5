//! Dense operators and states on the electron + two-nucleus register.
//!
//! Frequencies are cyclic kHz and times are ms, so `propagator(h, t)` is
//! `exp(-i 2π h t)`.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Subsystem slots of the register.
pub const ELECTRON: usize = 0;
pub const NUCLEAR1: usize = 1;
pub const NUCLEAR2: usize = 2;

/// Fixed ordering `[electron, nuclear1, nuclear2]`, each a qubit.
///
/// Electron `|0>` is ms = 0 and `|1>` is ms = -1 everywhere in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegisterLayout {
    pub dims: [usize; 3],
}

impl Default for RegisterLayout {
    fn default() -> Self {
        Self { dims: [2, 2, 2] }
    }
}

impl RegisterLayout {
    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }
}

/// A square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    m: CMatrix,
}

impl Operator {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        Ok(Self { m })
    }

    pub(crate) fn from_matrix(m: CMatrix) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self { m }
    }

    pub fn from_rows(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Ok(Self {
            m: CMatrix::from_row_slice(dim, dim, entries),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn kron(&self, other: &Operator) -> Self {
        Self {
            m: self.m.kronecker(&other.m),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            m: self.m.map(|z| z * s),
        }
    }

    pub fn add(&self, other: &Operator) -> Self {
        Self { m: &self.m + &other.m }
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        (&self.m - &other.m).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let prod = self.adjoint() * self;
        prod.max_abs_diff(&Operator::identity(self.dim())) <= tol
    }

    /// Pauli matrices.
    pub fn sigma_x() -> Self {
        Self::from_matrix(CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]))
    }

    pub fn sigma_y() -> Self {
        Self::from_matrix(CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]))
    }

    pub fn sigma_z() -> Self {
        Self::from_matrix(CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]))
    }

    /// Spin-1/2 operators `I_a = sigma_a / 2`.
    pub fn spin_x() -> Self {
        Self::sigma_x().scale(0.5)
    }

    pub fn spin_y() -> Self {
        Self::sigma_y().scale(0.5)
    }

    pub fn spin_z() -> Self {
        Self::sigma_z().scale(0.5)
    }

    /// `|i><i|` on a single qubit.
    pub fn projector(i: usize) -> Self {
        let mut m = CMatrix::zeros(2, 2);
        m[(i, i)] = ONE;
        Self::from_matrix(m)
    }

    /// `exp(-i angle/2 n.sigma)` for a (not necessarily normalized) axis.
    pub fn rotation(axis: [f64; 3], angle: f64) -> Self {
        Self::from_matrix(su2(axis, angle))
    }

    pub fn rx(angle: f64) -> Self {
        Self::rotation([1.0, 0.0, 0.0], angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::rotation([0.0, 1.0, 0.0], angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::rotation([0.0, 0.0, 1.0], angle)
    }

    /// Rotation about the equatorial axis at azimuth `phase`.
    pub fn r_phi(phase: f64, angle: f64) -> Self {
        Self::rotation([phase.cos(), phase.sin(), 0.0], angle)
    }

    /// `U rho U^dagger` on a raw matrix.
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        &self.m * rho * self.m.adjoint()
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator { m: &self.m * &rhs.m }
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        &self * &rhs
    }
}

impl Mul<&Operator> for Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        &self * rhs
    }
}

/// Closed-form SU(2) rotation matrix.
pub fn su2(axis: [f64; 3], angle: f64) -> CMatrix {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if norm == 0.0 {
        return CMatrix::identity(2, 2);
    }
    let (nx, ny, nz) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
    let (s, co) = (0.5 * angle).sin_cos();
    CMatrix::from_row_slice(
        2,
        2,
        &[c(co, -s * nz), c(-s * ny, -s * nx), c(s * ny, -s * nx), c(co, s * nz)],
    )
}

/// Propagator of the traceless qubit Hamiltonian `hx Ix + hy Iy + hz Iz`
/// over `t_ms`, without an eigendecomposition.
pub fn qubit_propagator(hx: f64, hy: f64, hz: f64, t_ms: f64) -> CMatrix {
    let w = (hx * hx + hy * hy + hz * hz).sqrt();
    su2([hx, hy, hz], 2.0 * PI * w * t_ms)
}

/// Axis and angle in `[0, 2π]` of a 2x2 unitary, up to global phase.
pub fn axis_angle(v: &CMatrix) -> ([f64; 3], f64) {
    let det = v[(0, 0)] * v[(1, 1)] - v[(0, 1)] * v[(1, 0)];
    let u = v / det.sqrt();
    let co = u.trace().re / 2.0;
    let n = [
        -(u[(0, 1)] + u[(1, 0)]).im / 2.0,
        (u[(1, 0)] - u[(0, 1)]).re / 2.0,
        -(u[(0, 0)] - u[(1, 1)]).im / 2.0,
    ];
    let s = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if s < 1e-15 {
        return ([0.0, 0.0, 1.0], if co >= 0.0 { 0.0 } else { 2.0 * PI });
    }
    ([n[0] / s, n[1] / s, n[2] / s], 2.0 * s.atan2(co))
}

/// `I ⊗ … ⊗ op ⊗ … ⊗ I` with `op` in `slot`.
pub fn tensor_embed(op: &Operator, slot: usize, layout: &RegisterLayout) -> Result<Operator> {
    if slot >= layout.dims.len() {
        return Err(Error::InvalidArgument(format!("slot {slot} out of range")));
    }
    if op.dim() != layout.dims[slot] {
        return Err(Error::DimensionMismatch {
            expected: layout.dims[slot],
            got: op.dim(),
        });
    }
    let mut out = CMatrix::identity(1, 1);
    for (k, &d) in layout.dims.iter().enumerate() {
        out = if k == slot {
            out.kronecker(op.matrix())
        } else {
            out.kronecker(&CMatrix::identity(d, d))
        };
    }
    Ok(Operator::from_matrix(out))
}

/// `exp(-i 2π H t)` via the Hermitian eigendecomposition of `h`.
pub fn propagator(h: &Operator, t_ms: f64) -> Result<Operator> {
    if !h.is_hermitian(1e-9) {
        return Err(Error::NotHermitian);
    }
    if !(t_ms >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative duration {t_ms}")));
    }
    let eig = SymmetricEigen::new(h.matrix().clone());
    let phases = CVector::from_iterator(
        h.dim(),
        eig.eigenvalues
            .iter()
            .map(|&w| C64::from_polar(1.0, -2.0 * PI * w * t_ms)),
    );
    let v = &eig.eigenvectors;
    let scaled = CMatrix::from_fn(h.dim(), h.dim(), |i, j| v[(i, j)] * phases[j]);
    Ok(Operator::from_matrix(scaled * v.adjoint()))
}

/// A unit-trace, Hermitian, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let rho = Self { m };
        rho.validate(1e-10, 1e-9)?;
        Ok(rho)
    }

    /// Wraps a matrix without checks; for pipelines that preserve validity.
    pub fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self { m }
    }

    pub fn validate(&self, tol: f64, psd_tol: f64) -> Result<()> {
        let m = &self.m;
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidState("not square".into()));
        }
        let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > tol {
            return Err(Error::InvalidState(format!("not Hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if min < -psd_tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn from_pure(psi: &PureState) -> Self {
        let v = psi.amplitudes();
        Self { m: v * v.adjoint() }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim).map(|z| z / dim as f64),
        }
    }

    /// `|i><i|`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        m[(i, i)] = ONE;
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn kron(&self, other: &DensityMatrix) -> Self {
        Self {
            m: self.m.kronecker(&other.m),
        }
    }

    pub fn evolve(&self, u: &Operator) -> Self {
        Self {
            m: u.conjugate(&self.m),
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.m + self.m.adjoint()).map(|z| z * 0.5);
        let mut e: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    /// `tr(rho O)`.
    pub fn expectation(&self, o: &Operator) -> C64 {
        (&self.m * o.matrix()).trace()
    }

    /// Convex combination `w self + (1 - w) other`.
    pub fn mix(&self, other: &DensityMatrix, w: f64) -> Self {
        Self {
            m: self.m.map(|z| z * w) + other.m.map(|z| z * (1.0 - w)),
        }
    }
}

/// A normalized state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    v: CVector,
}

impl PureState {
    pub fn new(v: CVector) -> Result<Self> {
        let n = v.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("norm {n}")));
        }
        Ok(Self { v })
    }

    /// Normalizes `v`; fails on the zero vector.
    pub fn normalized(v: CVector) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        Ok(Self { v: v / c(n, 0.0) })
    }

    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v[i] = ONE;
        Self { v }
    }

    /// `(|01> - |10>)/√2`.
    pub fn singlet() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            v: CVector::from_vec(vec![ZERO, c(s, 0.0), c(-s, 0.0), ZERO]),
        }
    }

    /// `(|01> + |10>)/√2`.
    pub fn triplet() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            v: CVector::from_vec(vec![ZERO, c(s, 0.0), c(s, 0.0), ZERO]),
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.v
    }

    pub fn kron(&self, other: &PureState) -> Self {
        Self {
            v: self.v.kronecker(&other.v),
        }
    }
}

/// Traces out the first factor of a `d1 * d2` matrix.
pub fn partial_trace_first(m: &CMatrix, d1: usize, d2: usize) -> CMatrix {
    CMatrix::from_fn(d2, d2, |i, j| (0..d1).map(|a| m[(a * d2 + i, a * d2 + j)]).sum())
}

/// Traces out the second factor of a `d1 * d2` matrix.
pub fn partial_trace_second(m: &CMatrix, d1: usize, d2: usize) -> CMatrix {
    CMatrix::from_fn(d1, d1, |i, j| (0..d2).map(|b| m[(i * d2 + b, j * d2 + b)]).sum())
}

pub fn partial_trace_electron(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dim() != 8 {
        return Err(Error::DimensionMismatch {
            expected: 8,
            got: rho.dim(),
        });
    }
    Ok(DensityMatrix::from_matrix_unchecked(partial_trace_first(
        rho.matrix(),
        2,
        4,
    )))
}

/// Reduced state of one nuclear spin (`spin` is 1 or 2) from a 4-dim state.
pub fn reduce_nuclear(rho4: &DensityMatrix, spin: usize) -> Result<DensityMatrix> {
    if rho4.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: rho4.dim(),
        });
    }
    let m = match spin {
        1 => partial_trace_second(rho4.matrix(), 2, 2),
        2 => partial_trace_first(rho4.matrix(), 2, 2),
        _ => return Err(Error::InvalidArgument(format!("spin {spin}"))),
    };
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// `<psi|rho|psi>`, clamped to `[0, 1]`.
pub fn state_fidelity(target: &PureState, rho: &DensityMatrix) -> Result<f64> {
    if target.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: rho.dim(),
        });
    }
    let v = target.amplitudes();
    let f = (v.adjoint() * rho.matrix() * v)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0))
}

/// Bloch vector of a qubit density matrix.
pub fn bloch_vector(rho: &CMatrix) -> [f64; 3] {
    [
        2.0 * rho[(0, 1)].re,
        -2.0 * rho[(0, 1)].im,
        (rho[(0, 0)] - rho[(1, 1)]).re,
    ]
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}
