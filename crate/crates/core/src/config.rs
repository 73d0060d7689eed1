//! Run configuration: a strict JSON schema plus the built-in preset.
//!
//! Every field carries a default, so `{}` parses to the noiseless reference
//! system. The `paper-2q` preset is the same system with the full lab noise
//! model switched on. Unknown keys are rejected rather than ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::{ControlHamiltonianSpec, EncodingHamiltonian};
use crate::error::{Error, Result};
use crate::noise::{NoiseModel, RelaxationParams};
use crate::optimizer::{Mode, OptimizerConfig, Problem};
use crate::quantum::{Axis, DensityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLine {
    pub qubit: usize,
    pub axis: Axis,
}

fn default_n_qubits() -> usize {
    2
}
fn default_omega() -> f64 {
    2.0 * std::f64::consts::PI * 50.0
}
fn default_coupling_j() -> f64 {
    214.5
}
fn default_total_time() -> f64 {
    9e-3
}
fn default_slices() -> usize {
    6
}
fn default_control_lines() -> Vec<ControlLine> {
    vec![
        ControlLine { qubit: 0, axis: Axis::X },
        ControlLine { qubit: 0, axis: Axis::Y },
        ControlLine { qubit: 1, axis: Axis::X },
        ControlLine { qubit: 1, axis: Axis::Y },
    ]
}
fn default_a_max() -> f64 {
    crate::encoding::default_amplitude_bound()
}
fn default_modes() -> Vec<Mode> {
    vec![Mode::Grape, Mode::GrapeExp, Mode::HqcGrape]
}
fn default_repeats() -> usize {
    5
}

/// Everything one run needs. `optimizer.seed` is the root seed; the CLI
/// `--seed` flag overwrites it after parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n_qubits: usize,
    /// Encoded frequency, rad/s.
    pub omega: f64,
    /// Scalar coupling, Hz.
    pub coupling_j: f64,
    /// Evolution time, s.
    pub total_time: f64,
    pub slices: usize,
    pub control_lines: Vec<ControlLine>,
    /// Amplitude bound, rad/s.
    pub a_max: f64,
    pub noise: NoiseModel,
    pub optimizer: OptimizerConfig,
    pub modes: Vec<Mode>,
    /// Reported QFI statistics average over this many sensor runs.
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_qubits: default_n_qubits(),
            omega: default_omega(),
            coupling_j: default_coupling_j(),
            total_time: default_total_time(),
            slices: default_slices(),
            control_lines: default_control_lines(),
            a_max: default_a_max(),
            noise: NoiseModel::default(),
            optimizer: OptimizerConfig::default(),
            modes: default_modes(),
            repeats: default_repeats(),
        }
    }
}

impl RunConfig {
    /// The coupled-pair system with the full noise stack: T₁ = (18.5, 9.9) s,
    /// T₂ = (0.3, 3.3) s, ±5% pulse fluctuation, initial-state fidelity
    /// 0.9986, readout σ = 1e−4.
    pub fn paper_2q() -> Self {
        Self {
            noise: NoiseModel {
                relaxation: Some(RelaxationParams {
                    t1: vec![18.5, 9.9],
                    t2: vec![0.3, 3.3],
                    gad_p: 0.5,
                }),
                pulse_fluctuation: Some(0.05),
                initial_state_fidelity: Some(0.9986),
                readout_sigma: Some(1e-4),
            },
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-2q" => Ok(Self::paper_2q()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (available: paper-2q)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits != 2 {
            return Err(Error::Config(format!(
                "only two-qubit systems are supported, got n_qubits = {}",
                self.n_qubits
            )));
        }
        if !self.omega.is_finite() || !self.coupling_j.is_finite() {
            return Err(Error::Config("omega and coupling_j must be finite".into()));
        }
        if !(self.total_time >= 0.0) {
            return Err(Error::Config("total_time must be non-negative".into()));
        }
        if self.slices == 0 {
            return Err(Error::Config("slices must be at least 1".into()));
        }
        if !(self.a_max > 0.0) {
            return Err(Error::Config("a_max must be positive".into()));
        }
        if self.control_lines.is_empty() {
            return Err(Error::Config("at least one control line is required".into()));
        }
        for line in &self.control_lines {
            if line.qubit >= self.n_qubits {
                return Err(Error::Config(format!(
                    "control line addresses qubit {} of {}",
                    line.qubit, self.n_qubits
                )));
            }
            if line.axis == Axis::Z {
                return Err(Error::Config("z-axis control lines are not supported".into()));
            }
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        self.noise.validate(self.n_qubits)?;
        self.optimizer.validate()?;
        if self.optimizer.init_amplitude_bound > self.a_max {
            return Err(Error::Config(format!(
                "init_amplitude_bound {} exceeds a_max {}",
                self.optimizer.init_amplitude_bound, self.a_max
            )));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        self.validate()?;
        let control_specs: Vec<ControlHamiltonianSpec> = self
            .control_lines
            .iter()
            .map(|l| ControlHamiltonianSpec::new(l.qubit, l.axis, self.n_qubits))
            .collect::<Result<_>>()?;
        Ok(Problem {
            hamiltonian: EncodingHamiltonian::two_qubit(self.omega, self.coupling_j),
            control_specs,
            probe: DensityMatrix::basis_state(0, self.n_qubits),
            total_time: self.total_time,
            slices: self.slices,
            a_max: self.a_max,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Reads and validates a config file. All failures surface as config errors.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_noiseless_reference_system() {
        let config = RunConfig::from_json("{}").unwrap();
        assert_eq!(config, RunConfig::default());
        assert!(config.noise.is_noiseless());
        assert_eq!(config.slices, 6);
        assert_eq!(config.control_lines.len(), 4);
        assert!((config.omega - 2.0 * std::f64::consts::PI * 50.0).abs() < 1e-12);
        assert_eq!(config.repeats, 5);
        assert_eq!(config.optimizer.seed, 1);
    }

    #[test]
    fn preset_carries_lab_noise() {
        let config = RunConfig::preset("paper-2q").unwrap();
        config.validate().unwrap();
        let relax = config.noise.relaxation.as_ref().unwrap();
        assert_eq!(relax.t2, vec![0.3, 3.3]);
        assert_eq!(relax.t1, vec![18.5, 9.9]);
        assert_eq!(config.noise.pulse_fluctuation, Some(0.05));
        assert_eq!(config.noise.initial_state_fidelity, Some(0.9986));
        assert_eq!(config.noise.readout_sigma, Some(1e-4));
        assert!((config.coupling_j - 214.5).abs() == 0.0);
        assert!(RunConfig::preset("paper-3q").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json("{\"bogus\": 1}").is_err());
        assert!(RunConfig::from_json("{\"noise\": {\"t3\": []}}").is_err());
        let nested = "{\"optimizer\": {\"lambda\": 1}}";
        assert!(RunConfig::from_json(nested).is_err());
    }

    #[test]
    fn round_trips_losslessly() {
        let config = RunConfig::paper_2q();
        let text = config.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut config = RunConfig::default();
        config.n_qubits = 3;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.slices = 0;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.control_lines = vec![ControlLine { qubit: 2, axis: Axis::X }];
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.control_lines = vec![ControlLine { qubit: 0, axis: Axis::Z }];
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.optimizer.init_amplitude_bound = config.a_max * 2.0;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.repeats = 0;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.modes.clear();
        assert!(config.validate().is_err());
    }

    #[test]
    fn problem_reflects_config() {
        let config = RunConfig::paper_2q();
        let problem = config.problem().unwrap();
        assert_eq!(problem.k(), 4);
        assert_eq!(problem.slices, 6);
        assert!((problem.total_time - 9e-3).abs() < 1e-18);
        assert_eq!(problem.probe.dim(), 4);
    }

    #[test]
    fn axis_serialization_in_control_lines() {
        let json = "{\"control_lines\": [{\"qubit\": 0, \"axis\": \"x\"}]}";
        let config = RunConfig::from_json(json).unwrap();
        assert_eq!(config.control_lines.len(), 1);
        assert_eq!(config.control_lines[0].axis, Axis::X);
    }
}
