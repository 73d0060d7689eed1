//! Error channels for the simulated sensor.
//!
//! Four independently toggleable imperfections: per-slice relaxation (phase
//! damping from T2 plus generalized amplitude damping from T1), multiplicative
//! pulse-amplitude fluctuation, depolarized initial-state preparation, and
//! Gaussian readout noise on measured populations.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::encoding::ControlGrid;
use crate::error::{Error, Result};
use crate::quantum::{embed, fidelity, pauli, Axis, CMatrix, DensityMatrix, C64};

/// T1/T2 times per qubit plus the GAD excitation mixing parameter.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RelaxationParams {
    /// Amplitude-damping times in seconds, one per qubit.
    pub t1: Vec<f64>,
    /// Dephasing times in seconds, one per qubit.
    pub t2: Vec<f64>,
    /// Excited-state weight of the GAD fixed point, in [0, 1].
    #[serde(default = "default_gad_p")]
    pub gad_p: f64,
}

fn default_gad_p() -> f64 {
    0.5
}

impl RelaxationParams {
    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.t1.len() != n_qubits || self.t2.len() != n_qubits {
            return Err(Error::Config(format!(
                "relaxation lists must have one entry per qubit ({n_qubits}), got t1: {}, t2: {}",
                self.t1.len(),
                self.t2.len()
            )));
        }
        if self.t1.iter().chain(self.t2.iter()).any(|&t| !(t > 0.0)) {
            return Err(Error::Config("relaxation times must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gad_p) {
            return Err(Error::Config(format!(
                "gad_p must lie in [0, 1], got {}",
                self.gad_p
            )));
        }
        Ok(())
    }
}

/// Composition of the error sources; every field is independently optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub relaxation: Option<RelaxationParams>,
    /// Maximum relative amplitude distortion, e.g. 0.05 for ±5%.
    pub pulse_fluctuation: Option<f64>,
    /// Overlap of the prepared probe with the ideal one, e.g. 0.9986.
    pub initial_state_fidelity: Option<f64>,
    /// Standard deviation of Gaussian noise on measured populations.
    pub readout_sigma: Option<f64>,
}

impl NoiseModel {
    pub fn is_noiseless(&self) -> bool {
        self.relaxation.is_none()
            && self.pulse_fluctuation.is_none()
            && self.initial_state_fidelity.is_none()
            && self.readout_sigma.is_none()
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if let Some(r) = &self.relaxation {
            r.validate(n_qubits)?;
        }
        if let Some(f) = self.pulse_fluctuation {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "pulse_fluctuation must lie in [0, 1], got {f}"
                )));
            }
        }
        if let Some(f) = self.initial_state_fidelity {
            if !(0.0 < f && f <= 1.0) {
                return Err(Error::Config(format!(
                    "initial_state_fidelity must lie in (0, 1], got {f}"
                )));
            }
        }
        if let Some(s) = self.readout_sigma {
            if !(s >= 0.0) {
                return Err(Error::Config(format!(
                    "readout_sigma must be non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Dephasing probability p = (1 − e^{−dt/T2})/2, via exp_m1 to avoid
/// cancellation at dt ≪ T2.
pub fn pd_probability(dt: f64, t2: f64) -> f64 {
    -(-dt / t2).exp_m1() / 2.0
}

/// Excitation decay weight η = 1 − e^{−dt/T1}, via exp_m1.
pub fn gad_eta(dt: f64, t1: f64) -> f64 {
    -(-dt / t1).exp_m1()
}

fn apply_kraus(rho: &DensityMatrix, kraus: &[CMatrix]) -> DensityMatrix {
    let dim = rho.dim();
    let mut out = CMatrix::zeros(dim, dim);
    for k in kraus {
        out += k * rho.matrix() * k.adjoint();
    }
    DensityMatrix::new_unchecked(out, rho.n_qubits())
}

/// ρ → (1−p)ρ + p·σz ρ σz on each qubit in turn, with per-qubit p from T2.
pub fn phase_damping(rho: &DensityMatrix, dt: f64, params: &RelaxationParams) -> Result<DensityMatrix> {
    params.validate(rho.n_qubits())?;
    let mut state = rho.clone();
    for qubit in 0..rho.n_qubits() {
        let p = pd_probability(dt, params.t2[qubit]);
        let z = embed(&pauli(Axis::Z), qubit, rho.n_qubits())?;
        let flipped = &z * state.matrix() * &z;
        let mixed = state.matrix().map(|e| e * C64::new(1.0 - p, 0.0))
            + flipped.map(|e| e * C64::new(p, 0.0));
        state = DensityMatrix::new_unchecked(mixed, rho.n_qubits());
    }
    Ok(state)
}

/// The four 2x2 GAD Kraus operators for decay weight η and mixing p.
pub fn gad_kraus(eta: f64, p: f64) -> [CMatrix; 4] {
    let r = |x: f64| C64::new(x, 0.0);
    let sp = p.sqrt();
    let sq = (1.0 - p).sqrt();
    let keep = (1.0 - eta).sqrt();
    let jump = eta.sqrt();
    let z = C64::new(0.0, 0.0);
    [
        CMatrix::from_row_slice(2, 2, &[r(sp), z, z, r(sp * keep)]),
        CMatrix::from_row_slice(2, 2, &[z, r(sp * jump), z, z]),
        CMatrix::from_row_slice(2, 2, &[r(sq * keep), z, z, r(sq)]),
        CMatrix::from_row_slice(2, 2, &[z, z, r(sq * jump), z]),
    ]
}

/// Four-Kraus generalized amplitude damping on each qubit in turn, with
/// per-qubit η from T1 and shared mixing parameter gad_p.
pub fn generalized_amplitude_damping(
    rho: &DensityMatrix,
    dt: f64,
    params: &RelaxationParams,
) -> Result<DensityMatrix> {
    params.validate(rho.n_qubits())?;
    let mut state = rho.clone();
    for qubit in 0..rho.n_qubits() {
        let eta = gad_eta(dt, params.t1[qubit]);
        let kraus: Vec<CMatrix> = gad_kraus(eta, params.gad_p)
            .iter()
            .map(|k| embed(k, qubit, rho.n_qubits()))
            .collect::<Result<_>>()?;
        let completeness: CMatrix = kraus.iter().map(|k| k.adjoint() * k).sum();
        let dev = crate::quantum::max_abs_diff(&completeness, &CMatrix::identity(rho.dim(), rho.dim()));
        if dev > 1e-12 {
            return Err(Error::InvalidState(format!(
                "GAD Kraus completeness violated by {dev:.3e}"
            )));
        }
        state = apply_kraus(&state, &kraus);
    }
    Ok(state)
}

/// Relaxation for one slice: phase damping on every qubit, then GAD.
pub fn apply_relaxation(rho: &DensityMatrix, dt: f64, params: &RelaxationParams) -> Result<DensityMatrix> {
    let after_pd = phase_damping(rho, dt, params)?;
    generalized_amplitude_damping(&after_pd, dt, params)
}

/// Multiplies every amplitude by (1+δ), δ ~ Uniform(−fraction, fraction),
/// drawn independently per entry. The distorted grid may exceed the nominal
/// amplitude bound; it represents the pulse actually applied, not a command.
pub fn perturb_controls<R: Rng + ?Sized>(u: &ControlGrid, fraction: f64, rng: &mut R) -> ControlGrid {
    if fraction == 0.0 {
        return u.clone();
    }
    let dist = Uniform::new_inclusive(-fraction, fraction).expect("valid range");
    let mut out = u.clone();
    for line in 0..u.k() {
        for slice in 0..u.m() {
            let delta = dist.sample(rng);
            out.set_unchecked(line, slice, u.get(line, slice) * (1.0 + delta));
        }
    }
    out
}

/// (1−ε)·target + ε·I/d with ε solved by bisection so the normalized overlap
/// with the target hits fidelity_target. Deterministic: the mixing weight is
/// a function of the target alone, so repeated preparations are identical.
pub fn imperfect_initial_state(target: &DensityMatrix, fidelity_target: f64) -> Result<DensityMatrix> {
    if !(0.0 < fidelity_target && fidelity_target <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "fidelity target must lie in (0, 1], got {fidelity_target}"
        )));
    }
    let dim = target.dim();
    let mix = |eps: f64| -> DensityMatrix {
        let m = target.matrix().map(|e| e * C64::new(1.0 - eps, 0.0))
            + CMatrix::identity(dim, dim).map(|e| e * C64::new(eps / dim as f64, 0.0));
        DensityMatrix::new_unchecked(m, target.n_qubits())
    };
    let f_of = |eps: f64| fidelity(&mix(eps), target).expect("same dimensions");
    if fidelity_target == 1.0 {
        return Ok(target.clone());
    }
    let f_floor = f_of(1.0);
    if fidelity_target < f_floor {
        return Err(Error::Infeasible(format!(
            "fidelity {fidelity_target} unreachable by depolarized mixing; the fully mixed state already has fidelity {f_floor:.6}"
        )));
    }
    // f_of decreases monotonically in eps on [0, 1]
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f_of(mid) > fidelity_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let eps = 0.5 * (lo + hi);
    let result = mix(eps);
    let achieved = f_of(eps);
    if (achieved - fidelity_target).abs() > 1e-6 {
        return Err(Error::Infeasible(format!(
            "bisection stalled at fidelity {achieved}, target {fidelity_target}"
        )));
    }
    Ok(result)
}

/// Adds independent N(0, sigma²) to each value. No clamping here; consumers
/// that need probabilities clamp after adding noise.
pub fn readout_noise<R: Rng + ?Sized>(values: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let dist = Normal::new(0.0, sigma).expect("valid sigma");
    values.iter().map(|v| v + dist.sample(rng)).collect()
}

#[cfg(test)]
// reference values below are transcribed at full printed length
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::encoding::default_amplitude_bound;
    use crate::quantum::{max_abs_diff, random_mixed_state, CVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DT: f64 = 1.5e-3;

    fn reference_params() -> RelaxationParams {
        RelaxationParams {
            t1: vec![18.5, 9.9],
            t2: vec![0.3, 3.3],
            gad_p: 0.5,
        }
    }

    #[test]
    fn rate_reference_values() {
        assert!((pd_probability(DT, 0.3) - 0.0024937604036588401).abs() < 1e-15);
        assert!((pd_probability(DT, 3.3) - 0.00022722108220546433).abs() < 1e-15);
        assert!((gad_eta(DT, 18.5) - 8.107779409904925e-05).abs() < 1e-15);
        assert!((gad_eta(DT, 9.9) - 0.00015150367367433581).abs() < 1e-15);
    }

    #[test]
    fn pd_scales_coherences_and_fixes_diagonals() {
        let mut ket = CVector::zeros(4);
        ket[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        ket[2] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let rho = DensityMatrix::from_pure(&ket).unwrap();
        let out = phase_damping(&rho, DT, &reference_params()).unwrap();
        // |00> and |10> differ on qubit 0 only, so the coherence picks up
        // exactly the qubit-0 factor e^{-dt/T2}
        let factor = (-DT / 0.3f64).exp();
        assert!((out.matrix()[(0, 2)].re - 0.5 * factor).abs() < 1e-15);
        for i in 0..4 {
            assert!((out.population(i) - rho.population(i)).abs() < 1e-16);
        }
        // diagonal states are fixed points
        let diag = DensityMatrix::basis_state(1, 2);
        let out = phase_damping(&diag, DT, &reference_params()).unwrap();
        assert!(max_abs_diff(out.matrix(), diag.matrix()) == 0.0);
    }

    #[test]
    fn pd_infinite_t2_is_identity() {
        let params = RelaxationParams {
            t1: vec![18.5, 9.9],
            t2: vec![f64::INFINITY, f64::INFINITY],
            gad_p: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_mixed_state(2, &mut rng);
        let out = phase_damping(&rho, DT, &params).unwrap();
        assert!(max_abs_diff(out.matrix(), rho.matrix()) < 1e-16);
    }

    #[test]
    fn gad_kraus_completeness() {
        for &(eta, p) in &[(8.107779409904925e-05, 0.5), (0.3, 0.5), (0.9, 0.2), (0.0, 0.7)] {
            let ks = gad_kraus(eta, p);
            let sum: CMatrix = ks.iter().map(|k| k.adjoint() * k).sum();
            assert!(max_abs_diff(&sum, &CMatrix::identity(2, 2)) < 1e-12, "eta {eta} p {p}");
        }
    }

    #[test]
    fn gad_moves_excited_population() {
        // |11><11|: qubit i loses population eta_i * p to its ground state
        let rho = DensityMatrix::basis_state(3, 2);
        let out = generalized_amplitude_damping(&rho, DT, &reference_params()).unwrap();
        let eta0 = gad_eta(DT, 18.5);
        let eta1 = gad_eta(DT, 9.9);
        // populations after independent per-qubit decay
        let stay0 = 1.0 - eta0 / 2.0;
        let stay1 = 1.0 - eta1 / 2.0;
        assert!((out.population(3) - stay0 * stay1).abs() < 1e-15);
        assert!((out.population(1) - (eta0 / 2.0) * stay1).abs() < 1e-18);
        assert!((out.population(2) - stay0 * (eta1 / 2.0)).abs() < 1e-18);
        assert!((out.population(0) - (eta0 / 2.0) * (eta1 / 2.0)).abs() < 1e-20);
    }

    #[test]
    fn gad_eta_zero_is_identity() {
        let params = RelaxationParams {
            t1: vec![f64::INFINITY, f64::INFINITY],
            t2: vec![0.3, 3.3],
            gad_p: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random_mixed_state(2, &mut rng);
        let out = generalized_amplitude_damping(&rho, DT, &params).unwrap();
        assert!(max_abs_diff(out.matrix(), rho.matrix()) < 1e-15);
    }

    #[test]
    fn channels_preserve_trace_and_hermiticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = reference_params();
        for _ in 0..50 {
            let rho = random_mixed_state(2, &mut rng);
            for out in [
                phase_damping(&rho, DT, &params).unwrap(),
                generalized_amplitude_damping(&rho, DT, &params).unwrap(),
                apply_relaxation(&rho, DT, &params).unwrap(),
            ] {
                assert!((out.matrix().trace().re - 1.0).abs() < 1e-12);
                assert!(out.matrix().trace().im.abs() < 1e-12);
                assert!(crate::quantum::hermiticity_deviation(out.matrix()) < 1e-12);
            }
        }
    }

    #[test]
    fn channels_contract_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = reference_params();
        for _ in 0..200 {
            let rho = random_mixed_state(2, &mut rng);
            let p0 = rho.purity();
            assert!(phase_damping(&rho, DT, &params).unwrap().purity() <= p0 + 1e-12);
            assert!(
                generalized_amplitude_damping(&rho, DT, &params).unwrap().purity() <= p0 + 1e-12
            );
        }
    }

    #[test]
    fn relaxation_composition_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = reference_params();
        let rho = random_mixed_state(2, &mut rng);
        let manual = generalized_amplitude_damping(
            &phase_damping(&rho, DT, &params).unwrap(),
            DT,
            &params,
        )
        .unwrap();
        let combined = apply_relaxation(&rho, DT, &params).unwrap();
        assert!(max_abs_diff(manual.matrix(), combined.matrix()) == 0.0);
    }

    #[test]
    fn perturbation_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let amps: Vec<f64> = (0..24).map(|i| (i as f64 - 12.0) * 20.0).collect();
        let u = ControlGrid::new(4, 6, 9e-3, default_amplitude_bound(), amps).unwrap();
        let same = perturb_controls(&u, 0.0, &mut rng);
        assert_eq!(same.amplitudes(), u.amplitudes());
        let p1 = perturb_controls(&u, 0.05, &mut ChaCha8Rng::seed_from_u64(7));
        let p2 = perturb_controls(&u, 0.05, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(p1.amplitudes(), p2.amplitudes());
        let p3 = perturb_controls(&u, 0.05, &mut ChaCha8Rng::seed_from_u64(8));
        assert_ne!(p1.amplitudes(), p3.amplitudes());
        for (orig, new) in u.amplitudes().iter().zip(p1.amplitudes()) {
            assert!((new - orig).abs() <= 0.05 * orig.abs() + 1e-18);
        }
    }

    fn noon_state() -> DensityMatrix {
        let mut ket = CVector::zeros(4);
        ket[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        ket[3] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        DensityMatrix::from_pure(&ket).unwrap()
    }

    #[test]
    fn initial_state_mixing_reference() {
        let target = noon_state();
        let prepared = imperfect_initial_state(&target, 0.9986).unwrap();
        // mixing weight is visible on the off-diagonal element
        let eps = 1.0 - 2.0 * prepared.matrix()[(0, 3)].re;
        assert!((eps - 0.11205014050222434).abs() < 1e-12, "eps {eps}");
        let achieved = fidelity(&prepared, &target).unwrap();
        assert!((achieved - 0.9986).abs() < 1e-6);
        // output is a valid state
        DensityMatrix::new(prepared.matrix().clone()).unwrap();
        // determinism
        let again = imperfect_initial_state(&target, 0.9986).unwrap();
        assert!(max_abs_diff(prepared.matrix(), again.matrix()) == 0.0);
    }

    #[test]
    fn initial_state_mixing_edge_cases() {
        let target = noon_state();
        let exact = imperfect_initial_state(&target, 1.0).unwrap();
        assert!(max_abs_diff(exact.matrix(), target.matrix()) == 0.0);
        // fully mixed floor for a pure 2-qubit target is 1/2
        assert!(imperfect_initial_state(&target, 0.4).is_err());
        assert!(imperfect_initial_state(&target, 1.2).is_err());
        assert!(imperfect_initial_state(&target, -0.1).is_err());
        let near_floor = imperfect_initial_state(&target, 0.51).unwrap();
        assert!((fidelity(&near_floor, &target).unwrap() - 0.51).abs() < 1e-6);
    }

    #[test]
    fn readout_noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let clean = vec![0.25; 100_000];
        assert_eq!(readout_noise(&clean, 0.0, &mut rng), clean);
        let noisy = readout_noise(&clean, 1e-4, &mut rng);
        let n = noisy.len() as f64;
        let mean = noisy.iter().sum::<f64>() / n;
        let var = noisy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((std - 1e-4).abs() < 0.02e-4, "std {std}");
        assert!((mean - 0.25).abs() < 3.0 * 1e-4 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn model_validation() {
        let mut model = NoiseModel::default();
        assert!(model.is_noiseless());
        model.validate(2).unwrap();
        model.pulse_fluctuation = Some(0.05);
        assert!(!model.is_noiseless());
        model.validate(2).unwrap();
        model.pulse_fluctuation = Some(1.5);
        assert!(model.validate(2).is_err());
        model.pulse_fluctuation = None;
        model.relaxation = Some(RelaxationParams {
            t1: vec![18.5],
            t2: vec![0.3, 3.3],
            gad_p: 0.5,
        });
        assert!(model.validate(2).is_err());
        model.relaxation = Some(RelaxationParams {
            t1: vec![18.5, -1.0],
            t2: vec![0.3, 3.3],
            gad_p: 0.5,
        });
        assert!(model.validate(2).is_err());
        model.relaxation = Some(reference_params());
        model.validate(2).unwrap();
    }

    #[test]
    fn model_serde_round_trip() {
        let model = NoiseModel {
            relaxation: Some(reference_params()),
            pulse_fluctuation: Some(0.05),
            initial_state_fidelity: Some(0.9986),
            readout_sigma: Some(1e-4),
        };
        let json = serde_json::to_string(&model).unwrap();
        let back: NoiseModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        let err: std::result::Result<NoiseModel, _> =
            serde_json::from_str("{\"unknown_field\": 1}");
        assert!(err.is_err());
    }
}
