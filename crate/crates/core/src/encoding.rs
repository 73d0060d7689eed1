//! Drift and control Hamiltonians on the piecewise-constant grid.
//!
//! The drift for the two-qubit sensor is
//! H0 = Ω(σz⊗I + I⊗σz)/2 + (πJ/2)·σz⊗σz, and the parameter being estimated
//! is Ω, so ∂H/∂Ω = (σz⊗I + I⊗σz)/2. Controls are bare Pauli operators on
//! individual qubits scaled by the grid amplitudes.

use crate::error::{Error, Result};
use crate::quantum::{
    embed, expm_unitary, pauli, Axis, CMatrix, DensityMatrix, UnitaryMatrix, C64,
};

/// Relative tolerance for the stored dt against total_time / slices.
pub const DT_CONSISTENCY_TOL: f64 = 1e-15;

/// Default amplitude bound, 2π·250 rad/s.
pub fn default_amplitude_bound() -> f64 {
    2.0 * std::f64::consts::PI * 250.0
}

#[derive(Debug, Clone)]
pub struct EncodingHamiltonian {
    pub n_qubits: usize,
    pub omega: f64,
    pub coupling_j: f64,
    h0: CMatrix,
    dh_domega: CMatrix,
}

impl EncodingHamiltonian {
    /// Coupled pair with Ω in rad/s and J in Hz.
    pub fn two_qubit(omega: f64, coupling_j: f64) -> Self {
        let z0 = embed(&pauli(Axis::Z), 0, 2).expect("valid embed");
        let z1 = embed(&pauli(Axis::Z), 1, 2).expect("valid embed");
        let dh_domega = (&z0 + &z1).scale(0.5);
        let h0 = dh_domega.scale(omega)
            + (&z0 * &z1).scale(std::f64::consts::PI * coupling_j / 2.0);
        Self {
            n_qubits: 2,
            omega,
            coupling_j,
            h0,
            dh_domega,
        }
    }

    pub fn h0(&self) -> &CMatrix {
        &self.h0
    }

    /// Generator of the parameter encoding, ∂H/∂Ω.
    pub fn dh_domega(&self) -> &CMatrix {
        &self.dh_domega
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }
}

/// One control line: σ_axis acting on one qubit, pre-embedded into the full space.
#[derive(Debug, Clone)]
pub struct ControlHamiltonianSpec {
    pub qubit: usize,
    pub axis: Axis,
    matrix: CMatrix,
}

impl ControlHamiltonianSpec {
    pub fn new(qubit: usize, axis: Axis, n_qubits: usize) -> Result<Self> {
        if axis == Axis::Z {
            return Err(Error::Config(
                "control axes are limited to x and y".into(),
            ));
        }
        let matrix = embed(&pauli(axis), qubit, n_qubits)?;
        Ok(Self { qubit, axis, matrix })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

/// The four standard lines for the two-qubit system: (q0,x), (q0,y), (q1,x), (q1,y).
pub fn default_control_specs() -> Vec<ControlHamiltonianSpec> {
    [(0, Axis::X), (0, Axis::Y), (1, Axis::X), (1, Axis::Y)]
        .into_iter()
        .map(|(q, a)| ControlHamiltonianSpec::new(q, a, 2).expect("valid spec"))
        .collect()
}

/// K×M amplitude grid over a fixed evolution window.
///
/// Amplitudes are stored row-major: entry (k, j) is control line k during
/// slice j, in rad/s. Every entry stays within ±a_max.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    k: usize,
    m: usize,
    total_time: f64,
    dt: f64,
    a_max: f64,
    amplitudes: Vec<f64>,
}

impl ControlGrid {
    pub fn new(
        k: usize,
        m: usize,
        total_time: f64,
        a_max: f64,
        amplitudes: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::Config("grid needs at least one line and one slice".into()));
        }
        if !(total_time >= 0.0) {
            return Err(Error::Config(format!(
                "total_time must be non-negative, got {total_time}"
            )));
        }
        if !(a_max > 0.0) {
            return Err(Error::Config(format!("a_max must be positive, got {a_max}")));
        }
        if amplitudes.len() != k * m {
            return Err(Error::Dimension(format!(
                "expected {} amplitudes for a {}x{} grid, got {}",
                k * m,
                k,
                m,
                amplitudes.len()
            )));
        }
        for (idx, &a) in amplitudes.iter().enumerate() {
            if !a.is_finite() || a.abs() > a_max {
                return Err(Error::OutOfRange(format!(
                    "amplitude {} at flat index {} exceeds bound {}",
                    a, idx, a_max
                )));
            }
        }
        let dt = total_time / m as f64;
        Ok(Self {
            k,
            m,
            total_time,
            dt,
            a_max,
            amplitudes,
        })
    }

    pub fn zeros(k: usize, m: usize, total_time: f64, a_max: f64) -> Result<Self> {
        Self::new(k, m, total_time, a_max, vec![0.0; k * m])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn get(&self, line: usize, slice: usize) -> f64 {
        assert!(line < self.k && slice < self.m);
        self.amplitudes[line * self.m + slice]
    }

    pub fn set(&mut self, line: usize, slice: usize, value: f64) -> Result<()> {
        if line >= self.k || slice >= self.m {
            return Err(Error::Index(format!(
                "entry ({line},{slice}) out of range for {}x{} grid",
                self.k, self.m
            )));
        }
        if !value.is_finite() || value.abs() > self.a_max {
            return Err(Error::OutOfRange(format!(
                "amplitude {value} exceeds bound {}",
                self.a_max
            )));
        }
        self.amplitudes[line * self.m + slice] = value;
        Ok(())
    }

    /// Bypasses the bound for internal finite-difference probes.
    pub(crate) fn set_unchecked(&mut self, line: usize, slice: usize, value: f64) {
        assert!(line < self.k && slice < self.m);
        self.amplitudes[line * self.m + slice] = value;
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// Checks the stored dt against total_time / slices.
    pub fn dt_consistent(&self) -> bool {
        let expect = self.total_time / self.m as f64;
        (self.dt - expect).abs() <= DT_CONSISTENCY_TOL * expect.abs()
    }

    /// The same pulse on a grid with `factor` times as many slices: every
    /// amplitude is repeated `factor` times, total_time is unchanged.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("refinement factor must be at least 1".into()));
        }
        let mut amplitudes = Vec::with_capacity(self.k * self.m * factor);
        for line in 0..self.k {
            for slice in 0..self.m {
                let a = self.amplitudes[line * self.m + slice];
                amplitudes.extend(std::iter::repeat_n(a, factor));
            }
        }
        Self::new(self.k, self.m * factor, self.total_time, self.a_max, amplitudes)
    }
}

/// H0 + Σ_k u[k, slice]·H_k for one slice.
pub fn slice_hamiltonian(
    h: &EncodingHamiltonian,
    specs: &[ControlHamiltonianSpec],
    u: &ControlGrid,
    slice: usize,
) -> Result<CMatrix> {
    if specs.len() != u.k() {
        return Err(Error::Dimension(format!(
            "{} control specs for a grid with {} lines",
            specs.len(),
            u.k()
        )));
    }
    if slice >= u.m() {
        return Err(Error::Index(format!(
            "slice {} out of range for {} slices",
            slice,
            u.m()
        )));
    }
    let mut total = h.h0().clone();
    for (line, spec) in specs.iter().enumerate() {
        let amp = u.get(line, slice);
        if amp != 0.0 {
            total += spec.matrix().scale(amp);
        }
    }
    Ok(total)
}

/// exp(−i·dt·H_slice) for one slice of the grid.
pub fn slice_propagator(
    h: &EncodingHamiltonian,
    specs: &[ControlHamiltonianSpec],
    u: &ControlGrid,
    slice: usize,
) -> Result<UnitaryMatrix> {
    let total = slice_hamiltonian(h, specs, u, slice)?;
    expm_unitary(&total, u.dt())
}

/// Ordered product U_{end−1}···U_{start} over the half-open slice range
/// [start, end); an empty range gives the identity.
pub fn window_propagator(
    h: &EncodingHamiltonian,
    specs: &[ControlHamiltonianSpec],
    u: &ControlGrid,
    start: usize,
    end: usize,
) -> Result<UnitaryMatrix> {
    if start > end || end > u.m() {
        return Err(Error::Index(format!(
            "invalid slice window [{start}, {end}) for {} slices",
            u.m()
        )));
    }
    let dim = h.dim();
    let mut acc = CMatrix::identity(dim, dim);
    for slice in start..end {
        let step = slice_propagator(h, specs, u, slice)?;
        acc = step.matrix() * acc;
    }
    UnitaryMatrix::new(acc)
}

/// exp(−i·angle·σ_axis/2) on one qubit, embedded. Closed form, so the
/// rotation is exact: cos(θ/2)·I − i·sin(θ/2)·σ.
pub fn local_rotation(axis: Axis, qubit: usize, angle: f64, n_qubits: usize) -> Result<UnitaryMatrix> {
    let sigma = embed(&pauli(axis), qubit, n_qubits)?;
    let dim = sigma.nrows();
    let half = angle / 2.0;
    let u = CMatrix::identity(dim, dim).map(|e| e * C64::new(half.cos(), 0.0))
        + sigma.map(|e| e * C64::new(0.0, -half.sin()));
    UnitaryMatrix::new(u)
}

/// Forward evolution of a state through every slice of the grid.
pub fn propagate(
    h: &EncodingHamiltonian,
    specs: &[ControlHamiltonianSpec],
    u: &ControlGrid,
    rho0: &DensityMatrix,
) -> Result<DensityMatrix> {
    let full = window_propagator(h, specs, u, 0, u.m())?;
    Ok(DensityMatrix::new_unchecked(
        full.conjugate(rho0.matrix()),
        rho0.n_qubits(),
    ))
}
