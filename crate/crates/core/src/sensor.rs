//! The simulated device boundary: prepare, evolve under a pulse grid with the
//! configured imperfections, measure populations. Everything the closed-loop
//! optimizer learns about the system passes through this interface, and every
//! evolution is counted, so experiment budgets are auditable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::{
    local_rotation, slice_propagator, ControlGrid, ControlHamiltonianSpec, EncodingHamiltonian,
};
use crate::error::{Error, Result};
use crate::metrology::{qfi_from_diagonals_unchecked, GradientGrid};
use crate::noise::{
    apply_relaxation, imperfect_initial_state, perturb_controls, readout_noise, NoiseModel,
};
use crate::quantum::DensityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationSign {
    Plus,
    Minus,
}

/// Instantaneous ±π/2 rotation of one control line's Pauli axis, applied
/// after the given slice (and after that slice's noise channels).
#[derive(Debug, Clone, Copy)]
pub struct Insertion {
    /// Index into the control spec list; fixes both qubit and axis.
    pub control: usize,
    pub sign: RotationSign,
    pub after_slice: usize,
}

#[derive(Debug, Clone)]
pub struct SensorConfig {
    pub hamiltonian: EncodingHamiltonian,
    pub control_specs: Vec<ControlHamiltonianSpec>,
    pub noise: NoiseModel,
    /// Ideal probe state; the identity component of a pseudo-pure preparation
    /// is already dropped, so this is the deviation part normalized to a state.
    pub probe: DensityMatrix,
}

impl SensorConfig {
    pub fn new(
        hamiltonian: EncodingHamiltonian,
        control_specs: Vec<ControlHamiltonianSpec>,
        noise: NoiseModel,
        probe: DensityMatrix,
    ) -> Result<Self> {
        if probe.dim() != hamiltonian.dim() {
            return Err(Error::Dimension(format!(
                "probe dimension {} does not match the Hamiltonian dimension {}",
                probe.dim(),
                hamiltonian.dim()
            )));
        }
        if control_specs.is_empty() {
            return Err(Error::Config("at least one control line is required".into()));
        }
        for spec in &control_specs {
            if spec.matrix().nrows() != hamiltonian.dim() {
                return Err(Error::Dimension(
                    "control spec dimension does not match the Hamiltonian".into(),
                ));
            }
        }
        noise.validate(hamiltonian.n_qubits)?;
        Ok(Self {
            hamiltonian,
            control_specs,
            noise,
            probe,
        })
    }
}

/// One measurement outcome plus the sensor's cumulative evolution counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub p00: f64,
    pub p11: f64,
    pub qfi_normalized: f64,
    pub evolutions_used: u64,
}

/// A device instance: configuration, its own random stream, and the count of
/// evolutions it has executed.
#[derive(Debug, Clone)]
pub struct Sensor {
    config: SensorConfig,
    rng: ChaCha8Rng,
    evolutions_used: u64,
}

impl Sensor {
    pub fn new(config: SensorConfig, seed: u64) -> Self {
        Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            evolutions_used: 0,
        }
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    pub fn evolutions_used(&self) -> u64 {
        self.evolutions_used
    }

    /// The probe actually loaded into the device: ideal, or depolarized to
    /// the configured preparation fidelity.
    pub fn prepare(&self) -> Result<DensityMatrix> {
        match self.config.noise.initial_state_fidelity {
            Some(f) if f < 1.0 => imperfect_initial_state(&self.config.probe, f),
            _ => Ok(self.config.probe.clone()),
        }
    }

    /// One full experimental run: prepare, then per slice apply the (possibly
    /// distorted) unitary followed by the relaxation channels, applying any
    /// requested rotations at their insertion points. Increments the counter.
    ///
    /// Pulse distortion is drawn once per call: each run of the experiment
    /// has its own realization.
    pub fn evolve(&mut self, u: &ControlGrid, insertions: &[Insertion]) -> Result<DensityMatrix> {
        if self.config.control_specs.len() != u.k() {
            return Err(Error::Dimension(format!(
                "{} control specs for a grid with {} lines",
                self.config.control_specs.len(),
                u.k()
            )));
        }
        for ins in insertions {
            if ins.control >= u.k() {
                return Err(Error::Index(format!(
                    "insertion control {} out of range for {} lines",
                    ins.control,
                    u.k()
                )));
            }
            if ins.after_slice >= u.m() {
                return Err(Error::Index(format!(
                    "insertion after slice {} out of range for {} slices",
                    ins.after_slice,
                    u.m()
                )));
            }
        }
        let applied = match self.config.noise.pulse_fluctuation {
            Some(frac) if frac > 0.0 => perturb_controls(u, frac, &mut self.rng),
            _ => u.clone(),
        };
        let n_qubits = self.config.probe.n_qubits();
        let mut rho = self.prepare()?;
        for slice in 0..u.m() {
            let prop = slice_propagator(
                &self.config.hamiltonian,
                &self.config.control_specs,
                &applied,
                slice,
            )?;
            rho = DensityMatrix::new_unchecked(prop.conjugate(rho.matrix()), n_qubits);
            if let Some(relax) = &self.config.noise.relaxation {
                rho = apply_relaxation(&rho, u.dt(), relax)?;
            }
            for ins in insertions.iter().filter(|i| i.after_slice == slice) {
                let spec = &self.config.control_specs[ins.control];
                let angle = match ins.sign {
                    RotationSign::Plus => std::f64::consts::FRAC_PI_2,
                    RotationSign::Minus => -std::f64::consts::FRAC_PI_2,
                };
                let rot = local_rotation(spec.axis, spec.qubit, angle, n_qubits)?;
                rho = DensityMatrix::new_unchecked(rot.conjugate(rho.matrix()), n_qubits);
            }
        }
        self.evolutions_used += 1;
        Ok(rho)
    }

    /// ⟨00|ρ|00⟩ and ⟨11|ρ|11⟩, with readout noise and [0,1] clamping when
    /// configured. Does not count as an evolution.
    pub fn measure_diagonals(&mut self, rho: &DensityMatrix) -> Result<(f64, f64)> {
        if rho.dim() != 4 {
            return Err(Error::Dimension(format!(
                "diagonal readout expects two qubits, got dimension {}",
                rho.dim()
            )));
        }
        let clean = [rho.population(0), rho.population(3)];
        match self.config.noise.readout_sigma {
            Some(sigma) if sigma > 0.0 => {
                let noisy = readout_noise(&clean, sigma, &mut self.rng);
                Ok((noisy[0].clamp(0.0, 1.0), noisy[1].clamp(0.0, 1.0)))
            }
            _ => Ok((clean[0], clean[1])),
        }
    }

    /// Objective measurement: one evolution, one readout, the diagonal QFI
    /// formula. The formula is applied without the model-level range gate;
    /// clamped noisy populations may legitimately sum slightly above 1.
    pub fn measure_qfi(&mut self, u: &ControlGrid) -> Result<MeasurementRecord> {
        let rho = self.evolve(u, &[])?;
        let (p00, p11) = self.measure_diagonals(&rho)?;
        let value = qfi_from_diagonals_unchecked(p00, p11, u.total_time());
        Ok(MeasurementRecord {
            p00,
            p11,
            qfi_normalized: value.normalized,
            evolutions_used: self.evolutions_used,
        })
    }

    /// Gradient measurement via rotation insertions; costs exactly 2·K·M
    /// evolutions. `d_ref` is p00 − p11 from the caller's objective
    /// measurement of the same pulse.
    pub fn measure_gradient(&mut self, u: &ControlGrid, d_ref: f64) -> Result<GradientGrid> {
        crate::metrology::rotation_insertion_gradient(self, u, d_ref)
    }
}
