//! Dense complex linear algebra and state primitives for small Hilbert spaces.
//!
//! Everything here targets dimensions 2^n with n small (the reference system is
//! two qubits); matrices are dense and operations are pure.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-9;
pub const UNITARY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::X => write!(f, "x"),
            Axis::Y => write!(f, "y"),
            Axis::Z => write!(f, "z"),
        }
    }
}

/// Standard 2x2 Pauli matrix.
pub fn pauli(axis: Axis) -> CMatrix {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match axis {
        Axis::X => CMatrix::from_row_slice(2, 2, &[z, one, one, z]),
        Axis::Y => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        Axis::Z => CMatrix::from_row_slice(2, 2, &[one, z, z, -one]),
    }
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Tensor placement: I ⊗ … ⊗ op ⊗ … ⊗ I with `op` at position `qubit`
/// (qubit 0 is the leftmost factor).
pub fn embed(op: &CMatrix, qubit: usize, n_qubits: usize) -> Result<CMatrix> {
    if op.nrows() != 2 || op.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "embed expects a 2x2 operator, got {}x{}",
            op.nrows(),
            op.ncols()
        )));
    }
    if qubit >= n_qubits {
        return Err(Error::Index(format!(
            "qubit {qubit} out of range for {n_qubits} qubits"
        )));
    }
    let mut out = CMatrix::identity(1, 1);
    for q in 0..n_qubits {
        let factor = if q == qubit {
            op.clone()
        } else {
            CMatrix::identity(2, 2)
        };
        out = out.kronecker(&factor);
    }
    Ok(out)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    max_abs_diff(m, &m.adjoint())
}

/// Tr(ab) as a complex number.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Unitary with the invariant max|U†U − I| ≤ 1e−10 checked at construction.
#[derive(Debug, Clone)]
pub struct UnitaryMatrix {
    m: CMatrix,
}

impl UnitaryMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let dim = m.nrows();
        if dim != m.ncols() {
            return Err(Error::Dimension("unitary must be square".into()));
        }
        let dev = max_abs_diff(&(m.adjoint() * &m), &identity(dim));
        if dev > UNITARY_TOL {
            return Err(Error::InvalidState(format!(
                "matrix is not unitary (max|U†U − I| = {dev:.3e})"
            )));
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn adjoint(&self) -> UnitaryMatrix {
        UnitaryMatrix { m: self.m.adjoint() }
    }

    /// U ρ U† on a raw matrix.
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        &self.m * rho * self.m.adjoint()
    }
}

/// exp(−i t H) for Hermitian H, via eigendecomposition.
///
/// The reconstruction V·diag(e^{−iλt})·V† is exactly unitary up to the
/// orthonormality of the computed eigenvectors, which is what the
/// UnitaryMatrix invariant checks.
pub fn expm_unitary(h: &CMatrix, t: f64) -> Result<UnitaryMatrix> {
    let dev = hermiticity_deviation(h);
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    let dim = h.nrows();
    // Diagonal generators exponentiate entrywise; diagonal drifts then stay
    // leakage-free (populations mix only through ulp rounding, never through
    // eigensolver residuals).
    let off_diag = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .map(|(i, j)| h[(i, j)].norm())
        .fold(0.0, f64::max);
    if off_diag == 0.0 {
        let mut u = CMatrix::zeros(dim, dim);
        for j in 0..dim {
            let angle = -t * h[(j, j)].re;
            u[(j, j)] = C64::new(angle.cos(), angle.sin());
        }
        return UnitaryMatrix::new(u);
    }
    // Symmetrize so the eigensolver sees an exactly Hermitian input.
    let h_sym = (h + h.adjoint()).scale(0.5);
    let eig = h_sym.symmetric_eigen();
    let mut phases = CMatrix::zeros(dim, dim);
    for j in 0..dim {
        let angle = -t * eig.eigenvalues[j];
        phases[(j, j)] = C64::new(angle.cos(), angle.sin());
    }
    let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
    UnitaryMatrix::new(u)
}

/// Density matrix with trace, Hermiticity and positivity checked at construction.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    m: CMatrix,
    n_qubits: usize,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let dim = m.nrows();
        if dim != m.ncols() || dim == 0 || !dim.is_power_of_two() {
            return Err(Error::Dimension(format!(
                "density matrix must be square with power-of-two dimension, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix trace is {tr}, expected 1"
            )));
        }
        let herm = hermiticity_deviation(&m);
        if herm > TRACE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix not Hermitian (max deviation {herm:.3e})"
            )));
        }
        let sym = (&m + m.adjoint()).scale(0.5);
        let min_eig = sym
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix has eigenvalue {min_eig:.3e} below tolerance"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        Ok(Self { m, n_qubits })
    }

    /// For channel/propagator outputs whose validity follows from the input's;
    /// callers must only pass trace- and positivity-preserving images.
    pub(crate) fn new_unchecked(m: CMatrix, n_qubits: usize) -> Self {
        Self { m, n_qubits }
    }

    pub fn from_pure(ket: &CVector) -> Result<Self> {
        let norm = ket.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!(
                "state vector norm is {norm}, expected 1"
            )));
        }
        let m = ket * ket.adjoint();
        Self::new(m)
    }

    /// |b…b⟩⟨b…b| for a computational-basis index.
    pub fn basis_state(index: usize, n_qubits: usize) -> Self {
        let dim = 1 << n_qubits;
        assert!(index < dim);
        let mut m = CMatrix::zeros(dim, dim);
        m[(index, index)] = C64::new(1.0, 0.0);
        Self { m, n_qubits }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Real part of the diagonal element ⟨i|ρ|i⟩.
    pub fn population(&self, index: usize) -> f64 {
        self.m[(index, index)].re
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.m, &self.m).re
    }
}

/// Normalized Hilbert-Schmidt overlap Tr(ab)/√(Tr(a²)·Tr(b²)).
///
/// This is not the Uhlmann fidelity; for pure states it reduces to |⟨ψ|φ⟩|².
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "fidelity dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let pa = a.purity();
    let pb = b.purity();
    if pa <= 0.0 || pb <= 0.0 {
        return Err(Error::InvalidState("zero-purity state in fidelity".into()));
    }
    Ok(trace_product(a.matrix(), b.matrix()).re / (pa * pb).sqrt())
}

/// Haar-like random pure state (complex Gaussian vector, normalized).
pub fn random_pure_state<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> DensityMatrix {
    let dim = 1 << n_qubits;
    let mut ket = CVector::zeros(dim);
    for i in 0..dim {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        ket[i] = C64::new(re, im);
    }
    let norm = ket.norm();
    ket /= C64::new(norm, 0.0);
    let m = &ket * ket.adjoint();
    DensityMatrix::new_unchecked(m, n_qubits)
}

/// Random density matrix: mixture of a few random pure states.
pub fn random_mixed_state<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> DensityMatrix {
    let dim = 1 << n_qubits;
    let terms = rng.random_range(1..=dim);
    let mut weights: Vec<f64> = (0..terms).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut m = CMatrix::zeros(dim, dim);
    for &w in &weights {
        let p = random_pure_state(n_qubits, rng);
        m += p.matrix().scale(w);
    }
    DensityMatrix::new_unchecked(m, n_qubits)
}
